#include "seqenc/netlayers.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "seqenc/error.hpp"

namespace seqenc {

namespace {

void check_sequence(const Matrix& frames, std::size_t dim) {
  if (frames.rows() == 0) throw Error(ErrorCode::kEmptyInput, "empty utterance");
  if (frames.cols() != dim)
    throw Error(ErrorCode::kShapeMismatch,
                "frame dim " + std::to_string(frames.cols()) + " != layer dim " + std::to_string(dim));
}

void check_upstream(std::span<const double> upstream, std::size_t expected) {
  if (upstream.size() != expected)
    throw Error(ErrorCode::kShapeMismatch, "upstream gradient has length " + std::to_string(upstream.size()) +
                                               ", expected " + std::to_string(expected));
}

}  // namespace

void NetFvParams::validate() const {
  if (w.rows() == 0 || w.cols() == 0) throw Error(ErrorCode::kInvalidArgument, "netfv needs K, D >= 1");
  if (b.rows() != w.rows() || b.cols() != w.cols()) throw Error(ErrorCode::kShapeMismatch, "netfv w/b shapes differ");
}

void NetVladParams::validate() const {
  if (mu.rows() == 0 || mu.cols() == 0) throw Error(ErrorCode::kInvalidArgument, "netvlad needs K, D >= 1");
  if (w.rows() != mu.rows() || w.cols() != mu.cols() || b.rows() != 1 || b.cols() != mu.rows())
    throw Error(ErrorCode::kShapeMismatch, "netvlad parameter shapes disagree");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kTanh: return "tanh";
    case Activation::kIsru: return "isru";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "tanh") return Activation::kTanh;
  if (name == "isru") return Activation::kIsru;
  throw Error(ErrorCode::kInvalidArgument, "unknown activation '" + name + "'");
}

std::size_t FrontEndParams::in_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
std::size_t FrontEndParams::out_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

void FrontEndParams::validate() const {
  if (layers.empty()) throw Error(ErrorCode::kInvalidArgument, "front-end has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.cols())
      throw Error(ErrorCode::kShapeMismatch, "front-end bias shape mismatch at layer " + std::to_string(l));
    if (l > 0 && layers[l - 1].weight.cols() != layer.weight.rows())
      throw Error(ErrorCode::kShapeMismatch, "front-end layer dims do not chain at layer " + std::to_string(l));
  }
}

// ---------------------------------------------------------------------------

EncodedVector tap_forward(const Matrix& frames) {
  if (frames.rows() == 0) throw Error(ErrorCode::kEmptyInput, "empty utterance");
  EncodedVector out;
  out.layout = {EncoderKind::kTap, 1, frames.cols(), NormScheme::none()};
  out.values.assign(frames.cols(), 0.0);
  for (std::size_t i = 0; i < frames.rows(); ++i) axpy(1.0, frames.row(i), out.values);
  const double inv = 1.0 / static_cast<double>(frames.rows());
  for (double& v : out.values) v *= inv;
  return out;
}

Matrix tap_backward(std::size_t frame_count, std::span<const double> upstream) {
  if (frame_count == 0) throw Error(ErrorCode::kEmptyInput, "empty utterance");
  Matrix g(frame_count, upstream.size());
  const double inv = 1.0 / static_cast<double>(frame_count);
  for (std::size_t i = 0; i < frame_count; ++i) axpy(inv, upstream, g.row(i));
  return g;
}

// ---------------------------------------------------------------------------
// NetFV

namespace {

// Fills z (K x D) for one frame and returns the posterior gamma (length K).
void netfv_frame(const NetFvParams& p, std::span<const double> x, Matrix& z, std::vector<double>& gamma) {
  const std::size_t k_count = p.clusters();
  const std::size_t dim = p.dim();
  for (std::size_t k = 0; k < k_count; ++k) {
    const auto w = p.w.row(k);
    const auto b = p.b.row(k);
    auto zk = z.row(k);
    double q = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      zk[d] = w[d] * (x[d] + b[d]);
      q += zk[d] * zk[d];
    }
    gamma[k] = -0.5 * q;
  }
  softmax_inplace(gamma);
}

}  // namespace

Matrix netfv_posteriors(const NetFvParams& p, const Matrix& frames) {
  p.validate();
  check_sequence(frames, p.dim());
  Matrix gamma_all(frames.rows(), p.clusters());
  Matrix z(p.clusters(), p.dim());
  std::vector<double> gamma(p.clusters());
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    netfv_frame(p, frames.row(i), z, gamma);
    std::copy(gamma.begin(), gamma.end(), gamma_all.row(i).begin());
  }
  return gamma_all;
}

EncodedVector netfv_forward(const NetFvParams& p, const Matrix& frames, const NormScheme& scheme, NetFvCache* cache) {
  p.validate();
  check_sequence(frames, p.dim());
  const std::size_t k_count = p.clusters();
  const std::size_t dim = p.dim();
  const std::size_t sigma_offset = k_count * dim;
  std::vector<double> raw(2 * k_count * dim, 0.0);
  if (cache) cache->gamma = Matrix(frames.rows(), k_count);

  Matrix z(k_count, dim);
  std::vector<double> gamma(k_count);
  constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    netfv_frame(p, frames.row(i), z, gamma);
    if (cache) std::copy(gamma.begin(), gamma.end(), cache->gamma.row(i).begin());
    for (std::size_t k = 0; k < k_count; ++k) {
      const double g = gamma[k];
      const double* zk = z.row(k).data();
      double* mean_block = raw.data() + k * dim;
      double* sigma_block = raw.data() + sigma_offset + k * dim;
      for (std::size_t d = 0; d < dim; ++d) {
        mean_block[d] += g * zk[d];
        sigma_block[d] += kInvSqrt2 * g * (zk[d] * zk[d] - 1.0);
      }
    }
  }
  const double inv_l = 1.0 / static_cast<double>(frames.rows());
  for (double& v : raw) v *= inv_l;

  EncodedVector out;
  out.layout = {EncoderKind::kNetFv, k_count, dim, scheme};
  out.values = scheme.kind == NormScheme::Kind::kNone ? raw : normalize(raw, dim, scheme);
  if (cache) cache->raw = std::move(raw);
  return out;
}

NetFvGrads netfv_backward(const NetFvParams& p, const Matrix& frames, std::span<const double> upstream,
                          const NormScheme& scheme, const NetFvCache* cache) {
  p.validate();
  check_sequence(frames, p.dim());
  const std::size_t k_count = p.clusters();
  const std::size_t dim = p.dim();
  const std::size_t out_size = 2 * k_count * dim;
  check_upstream(upstream, out_size);

  std::vector<double> g_raw;
  if (scheme.kind == NormScheme::Kind::kNone) {
    g_raw.assign(upstream.begin(), upstream.end());
  } else if (cache) {
    g_raw = normalize_backward(cache->raw, dim, scheme, upstream);
  } else {
    const EncodedVector raw = netfv_forward(p, frames, NormScheme::none());
    g_raw = normalize_backward(raw.values, dim, scheme, upstream);
  }
  // Fold the 1/L of the mean pooling into the upstream gradient.
  const double inv_l = 1.0 / static_cast<double>(frames.rows());
  for (double& v : g_raw) v *= inv_l;
  const double* g_mean = g_raw.data();
  const double* g_sigma = g_raw.data() + k_count * dim;

  NetFvGrads grads{Matrix(k_count, dim), Matrix(k_count, dim), Matrix(frames.rows(), dim)};
  Matrix z(k_count, dim);
  std::vector<double> gamma(k_count);
  std::vector<double> a(k_count);
  std::vector<double> dz(dim);
  constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;
  constexpr double kSqrt2 = std::numbers::sqrt2;

  for (std::size_t i = 0; i < frames.rows(); ++i) {
    const auto x = frames.row(i);
    if (cache) {
      for (std::size_t k = 0; k < k_count; ++k) {
        const double* w = p.w.row(k).data();
        const double* b = p.b.row(k).data();
        double* zk = z.row(k).data();
        for (std::size_t d = 0; d < dim; ++d) zk[d] = w[d] * (x[d] + b[d]);
      }
      const auto gi = cache->gamma.row(i);
      std::copy(gi.begin(), gi.end(), gamma.begin());
    } else {
      netfv_frame(p, x, z, gamma);
    }

    // dLoss/dgamma_k.
    double a_bar = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      const auto zk = z.row(k);
      const double* gm = g_mean + k * dim;
      const double* gs = g_sigma + k * dim;
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) s += gm[d] * zk[d] + kInvSqrt2 * gs[d] * (zk[d] * zk[d] - 1.0);
      a[k] = s;
      a_bar += gamma[k] * s;
    }

    auto dx = grads.frames.row(i);
    for (std::size_t k = 0; k < k_count; ++k) {
      const auto zk = z.row(k);
      const auto w = p.w.row(k);
      const auto b = p.b.row(k);
      const double* gm = g_mean + k * dim;
      const double* gs = g_sigma + k * dim;
      // Softmax coupling: dLoss/dlogit_k with logit_k = -1/2 |z_k|^2.
      const double dlogit = gamma[k] * (a[k] - a_bar);
      auto dw = grads.w.row(k);
      auto db = grads.b.row(k);
      for (std::size_t d = 0; d < dim; ++d) {
        const double dzd = gamma[k] * (gm[d] + kSqrt2 * zk[d] * gs[d]) - dlogit * zk[d];
        dw[d] += dzd * (x[d] + b[d]);
        const double through_w = dzd * w[d];
        db[d] += through_w;
        dx[d] += through_w;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// NetVLAD

Matrix netvlad_assignments(const NetVladParams& p, const Matrix& frames) {
  p.validate();
  check_sequence(frames, p.dim());
  Matrix logits = matmul_a_bt(frames, p.w);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    axpy(1.0, p.b.row(0), row);
    softmax_inplace(row);
  }
  return logits;
}

namespace {

std::vector<double> netvlad_raw(const NetVladParams& p, const Matrix& frames, const Matrix& beta) {
  const std::size_t k_count = p.clusters();
  Matrix v(k_count, p.dim());
  matmul_at_b_acc(beta, frames, v);
  std::vector<double> occupancy(k_count, 0.0);
  for (std::size_t i = 0; i < beta.rows(); ++i) axpy(1.0, beta.row(i), occupancy);
  for (std::size_t k = 0; k < k_count; ++k) axpy(-occupancy[k], p.mu.row(k), v.row(k));
  return v.values();
}

}  // namespace

EncodedVector netvlad_forward(const NetVladParams& p, const Matrix& frames, const NormScheme& scheme,
                              NetVladCache* cache) {
  Matrix beta = netvlad_assignments(p, frames);
  std::vector<double> raw = netvlad_raw(p, frames, beta);
  EncodedVector out;
  out.layout = {EncoderKind::kNetVlad, p.clusters(), p.dim(), scheme};
  out.values = scheme.kind == NormScheme::Kind::kNone ? raw : normalize(raw, p.dim(), scheme);
  if (cache) {
    cache->beta = std::move(beta);
    cache->raw = std::move(raw);
  }
  return out;
}

NetVladGrads netvlad_backward(const NetVladParams& p, const Matrix& frames, std::span<const double> upstream,
                              const NormScheme& scheme, const NetVladCache* cache) {
  Matrix computed;
  if (!cache) computed = netvlad_assignments(p, frames);
  const Matrix& beta = cache ? cache->beta : computed;
  const std::size_t k_count = p.clusters();
  const std::size_t dim = p.dim();
  const std::size_t n = frames.rows();
  check_upstream(upstream, k_count * dim);

  Matrix g_v(k_count, dim);
  if (scheme.kind == NormScheme::Kind::kNone) {
    std::copy(upstream.begin(), upstream.end(), g_v.flat().begin());
  } else {
    const std::vector<double> raw = cache ? cache->raw : netvlad_raw(p, frames, beta);
    const std::vector<double> g = normalize_backward(raw, dim, scheme, upstream);
    std::copy(g.begin(), g.end(), g_v.flat().begin());
  }

  NetVladGrads grads{Matrix(k_count, dim), Matrix(k_count, dim), Matrix(1, k_count), Matrix(n, dim)};

  // Anchors: dV(k)/dmu_k = -sum_i beta_ik.
  std::vector<double> occupancy(k_count, 0.0);
  for (std::size_t i = 0; i < n; ++i) axpy(1.0, beta.row(i), occupancy);
  for (std::size_t k = 0; k < k_count; ++k) axpy(-occupancy[k], g_v.row(k), grads.mu.row(k));

  // a_ik = g_V(k) . (x_i - mu_k) is dLoss/dbeta_ik.
  Matrix a = matmul_a_bt(frames, g_v);
  std::vector<double> g_dot_mu(k_count);
  for (std::size_t k = 0; k < k_count; ++k) g_dot_mu[k] = dot(g_v.row(k), p.mu.row(k));

  Matrix dlogits(n, k_count);
  for (std::size_t i = 0; i < n; ++i) {
    const auto bi = beta.row(i);
    auto ai = a.row(i);
    double a_bar = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      ai[k] -= g_dot_mu[k];
      a_bar += bi[k] * ai[k];
    }
    auto di = dlogits.row(i);
    for (std::size_t k = 0; k < k_count; ++k) di[k] = bi[k] * (ai[k] - a_bar);
  }

  // dx_i = sum_k beta_ik g_V(k) + sum_k dlogit_ik w_k.
  grads.frames = matmul(beta, g_v);
  const Matrix through_assign = matmul(dlogits, p.w);
  axpy(1.0, through_assign.flat(), grads.frames.flat());

  matmul_at_b_acc(dlogits, frames, grads.w);
  for (std::size_t i = 0; i < n; ++i) axpy(1.0, dlogits.row(i), grads.b.row(0));
  return grads;
}

// ---------------------------------------------------------------------------
// Front-end

namespace {

void activate_inplace(Activation act, std::span<double> v) {
  switch (act) {
    case Activation::kIdentity: return;
    case Activation::kTanh:
      for (double& x : v) x = std::tanh(x);
      return;
    case Activation::kIsru:
      for (double& x : v) x = x / std::sqrt(1.0 + x * x);
      return;
  }
}

// g *= act'(pre), elementwise, written in terms of the output y = act(pre).
void activation_backward_inplace(Activation act, std::span<const double> y, std::span<double> g) {
  switch (act) {
    case Activation::kIdentity: return;
    case Activation::kTanh:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
      return;
    case Activation::kIsru:
      // y = x / sqrt(1 + x^2)  =>  dy/dx = (1 - y^2)^(3/2).
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = 1.0 - y[i] * y[i];
        g[i] *= s * std::sqrt(s);
      }
      return;
  }
}

Matrix affine(const AffineLayer& layer, const Matrix& in) {
  const std::size_t n_in = layer.weight.rows();
  const std::size_t n_out = layer.weight.cols();
  Matrix out(in.rows(), n_out);
  const double* w = layer.weight.flat().data();
  const double* bias = layer.bias.flat().data();
  for (std::size_t i = 0; i < in.rows(); ++i) {
    const double* x = in.row(i).data();
    double* y = out.row(i).data();
    for (std::size_t j = 0; j < n_out; ++j) y[j] = bias[j];
    for (std::size_t k = 0; k < n_in; ++k) {
      const double xk = x[k];
      const double* wk = w + k * n_out;
      for (std::size_t j = 0; j < n_out; ++j) y[j] += xk * wk[j];
    }
  }
  return out;
}

}  // namespace

FrontEndCache frontend_forward_cached(const FrontEndParams& p, const Matrix& frames) {
  p.validate();
  if (frames.cols() != p.in_dim())
    throw Error(ErrorCode::kShapeMismatch, "frame dim " + std::to_string(frames.cols()) + " != front-end input dim " +
                                               std::to_string(p.in_dim()));
  FrontEndCache cache;
  cache.inputs.reserve(p.layers.size());
  Matrix h = frames;
  for (const auto& layer : p.layers) {
    Matrix next = affine(layer, h);
    activate_inplace(p.activation, next.flat());
    cache.inputs.push_back(std::move(h));
    h = std::move(next);
  }
  cache.output = std::move(h);
  return cache;
}

Matrix frontend_forward(const FrontEndParams& p, const Matrix& frames) {
  p.validate();
  if (frames.cols() != p.in_dim())
    throw Error(ErrorCode::kShapeMismatch, "frame dim " + std::to_string(frames.cols()) + " != front-end input dim " +
                                               std::to_string(p.in_dim()));
  Matrix h = frames;
  for (const auto& layer : p.layers) {
    h = affine(layer, h);
    activate_inplace(p.activation, h.flat());
  }
  return h;
}

FrontEndGrads frontend_backward(const FrontEndParams& p, const FrontEndCache& cache, const Matrix& upstream) {
  if (upstream.rows() != cache.output.rows() || upstream.cols() != cache.output.cols())
    throw Error(ErrorCode::kShapeMismatch, "front-end upstream gradient shape mismatch");
  FrontEndGrads grads;
  grads.layers.resize(p.layers.size());
  Matrix g = upstream;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& layer = p.layers[l];
    const Matrix& y = l + 1 < p.layers.size() ? cache.inputs[l + 1] : cache.output;
    activation_backward_inplace(p.activation, y.flat(), g.flat());
    auto& gl = grads.layers[l];
    gl.weight = Matrix(layer.weight.rows(), layer.weight.cols());
    gl.bias = Matrix(1, layer.weight.cols());
    matmul_at_b_acc(cache.inputs[l], g, gl.weight);
    for (std::size_t i = 0; i < g.rows(); ++i) axpy(1.0, g.row(i), gl.bias.row(0));
    g = matmul_a_bt(g, layer.weight);
  }
  grads.frames = std::move(g);
  return grads;
}

// ---------------------------------------------------------------------------
// Classifier and loss

std::vector<double> classifier_forward(const ClassifierParams& p, std::span<const double> encoding) {
  if (encoding.size() != p.input_dim())
    throw Error(ErrorCode::kShapeMismatch, "classifier expects input of length " + std::to_string(p.input_dim()) +
                                               ", got " + std::to_string(encoding.size()));
  if (p.bias.rows() != 1 || p.bias.cols() != p.classes())
    throw Error(ErrorCode::kShapeMismatch, "classifier bias shape mismatch");
  std::vector<double> scores(p.classes());
  for (std::size_t j = 0; j < p.classes(); ++j) scores[j] = dot(p.weight.row(j), encoding) + p.bias(0, j);
  return scores;
}

ClassifierGrads classifier_backward(const ClassifierParams& p, std::span<const double> encoding,
                                    std::span<const double> dscores) {
  if (encoding.size() != p.input_dim() || dscores.size() != p.classes())
    throw Error(ErrorCode::kShapeMismatch, "classifier backward shape mismatch");
  ClassifierGrads g{Matrix(p.classes(), p.input_dim()), Matrix(1, p.classes()),
                    std::vector<double>(p.input_dim(), 0.0)};
  for (std::size_t j = 0; j < p.classes(); ++j) {
    axpy(dscores[j], encoding, g.weight.row(j));
    g.bias(0, j) = dscores[j];
    axpy(dscores[j], p.weight.row(j), g.encoding);
  }
  return g;
}

std::vector<double> log_softmax(std::span<const double> scores) {
  const double lse = logsumexp(scores);
  std::vector<double> out(scores.begin(), scores.end());
  for (double& v : out) v -= lse;
  return out;
}

XentResult softmax_xent(std::span<const double> scores, std::size_t label) {
  if (label >= scores.size())
    throw Error(ErrorCode::kInvalidArgument,
                "label " + std::to_string(label) + " out of range for " + std::to_string(scores.size()) + " classes");
  const double lse = logsumexp(scores);
  XentResult r;
  r.loss = lse - scores[label];
  r.grad.resize(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) r.grad[j] = std::exp(scores[j] - lse);
  r.grad[label] -= 1.0;
  return r;
}

}  // namespace seqenc
