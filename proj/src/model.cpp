#include "seqenc/model.hpp"

#include <cmath>

#include "seqenc/error.hpp"
#include "seqenc/gmm.hpp"

namespace seqenc {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void add_scaled(const Matrix& src, double scale, Matrix& dst) { axpy(scale, src.flat(), dst.flat()); }

}  // namespace

EncoderKind Model::encoder_kind() const {
  return std::visit(Overloaded{[](const TapParams&) { return EncoderKind::kTap; },
                               [](const NetFvParams&) { return EncoderKind::kNetFv; },
                               [](const NetVladParams&) { return EncoderKind::kNetVlad; }},
                    encoder);
}

std::size_t Model::clusters() const {
  return std::visit(Overloaded{[](const TapParams&) -> std::size_t { return 1; },
                               [](const NetFvParams& p) { return p.clusters(); },
                               [](const NetVladParams& p) { return p.clusters(); }},
                    encoder);
}

EncodingLayout Model::encoding_layout() const { return {encoder_kind(), clusters(), channels(), norm}; }

std::size_t Model::encoding_size() const { return encoding_layout().expected_size(); }

std::vector<Matrix*> Model::tensors() {
  std::vector<Matrix*> out;
  for (auto& layer : frontend.layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  std::visit(Overloaded{[](TapParams&) {},
                        [&](NetFvParams& p) {
                          out.push_back(&p.w);
                          out.push_back(&p.b);
                        },
                        [&](NetVladParams& p) {
                          out.push_back(&p.mu);
                          out.push_back(&p.w);
                          out.push_back(&p.b);
                        }},
             encoder);
  out.push_back(&classifier.weight);
  out.push_back(&classifier.bias);
  return out;
}

std::vector<const Matrix*> Model::tensors() const {
  auto mutable_view = const_cast<Model*>(this)->tensors();
  return {mutable_view.begin(), mutable_view.end()};
}

std::vector<std::string> Model::tensor_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < frontend.layers.size(); ++l) {
    names.push_back("frontend." + std::to_string(l) + ".weight");
    names.push_back("frontend." + std::to_string(l) + ".bias");
  }
  switch (encoder_kind()) {
    case EncoderKind::kNetFv:
      names.insert(names.end(), {"netfv.w", "netfv.b"});
      break;
    case EncoderKind::kNetVlad:
      names.insert(names.end(), {"netvlad.mu", "netvlad.w", "netvlad.b"});
      break;
    default:
      break;
  }
  names.insert(names.end(), {"classifier.weight", "classifier.bias"});
  return names;
}

Model Model::zeros_like() const {
  Model z = *this;
  for (Matrix* t : z.tensors()) t->fill(0.0);
  return z;
}

void Model::validate() const {
  frontend.validate();
  std::visit(Overloaded{[](const TapParams&) {}, [](const NetFvParams& p) { p.validate(); },
                        [](const NetVladParams& p) { p.validate(); }},
             encoder);
  if (encoder_kind() != EncoderKind::kTap) {
    const std::size_t enc_dim =
        encoder_kind() == EncoderKind::kNetFv ? std::get<NetFvParams>(encoder).dim() : std::get<NetVladParams>(encoder).dim();
    if (enc_dim != channels()) throw Error(ErrorCode::kShapeMismatch, "encoder dim does not match front-end output");
  }
  if (classifier.input_dim() != encoding_size())
    throw Error(ErrorCode::kShapeMismatch, "classifier input does not match encoding size");
  if (classifier.bias.rows() != 1 || classifier.bias.cols() != classifier.classes())
    throw Error(ErrorCode::kShapeMismatch, "classifier bias shape mismatch");
}

std::string to_string(InitMode m) { return m == InitMode::kFromGmm ? "from-gmm" : "random"; }

InitMode init_mode_from_string(const std::string& name) {
  if (name == "from-gmm") return InitMode::kFromGmm;
  if (name == "random") return InitMode::kRandom;
  throw Error(ErrorCode::kInvalidArgument, "unknown init mode '" + name + "'");
}

NormScheme default_norm(EncoderKind kind) {
  return kind == EncoderKind::kNetVlad ? NormScheme::intra_l2_then_l2() : NormScheme::none();
}

Model init_model(const ModelSpec& spec, Rng& rng) {
  if (spec.input_dim == 0 || spec.channels == 0 || spec.classes == 0 || spec.clusters == 0)
    throw Error(ErrorCode::kInvalidArgument, "model dimensions must be positive");
  Model m;
  m.frontend.activation = spec.activation;
  std::size_t in = spec.input_dim;
  std::vector<std::size_t> widths = spec.hidden;
  widths.push_back(spec.channels);
  for (std::size_t out : widths) {
    if (out == 0) throw Error(ErrorCode::kInvalidArgument, "layer width must be positive");
    AffineLayer layer{gaussian_sample(rng, in, out, 0.0, 1.0 / std::sqrt(static_cast<double>(in))), Matrix(1, out)};
    m.frontend.layers.push_back(std::move(layer));
    in = out;
  }
  const std::size_t c = spec.channels;
  const std::size_t k = spec.clusters;
  switch (spec.encoder) {
    case EncoderKind::kTap:
      m.encoder = TapParams{};
      break;
    case EncoderKind::kNetFv: {
      NetFvParams p{gaussian_sample(rng, k, c, 1.0, 0.1), gaussian_sample(rng, k, c, 0.0, 1.0)};
      m.encoder = std::move(p);
      break;
    }
    case EncoderKind::kNetVlad: {
      NetVladParams p{gaussian_sample(rng, k, c, 0.0, 1.0), gaussian_sample(rng, k, c, 0.0, 0.1), Matrix(1, k)};
      m.encoder = std::move(p);
      break;
    }
    default:
      throw Error(ErrorCode::kInvalidArgument, "encoder '" + to_string(spec.encoder) + "' is not trainable");
  }
  m.norm = spec.norm;
  const std::size_t e = m.encoding_size();
  m.classifier = {gaussian_sample(rng, spec.classes, e, 0.0, 0.01), Matrix(1, spec.classes)};
  return m;
}

NetFvParams netfv_from_gmm(const Matrix& means, const Matrix& stds) {
  NetFvParams p{Matrix(means.rows(), means.cols()), Matrix(means.rows(), means.cols())};
  for (std::size_t i = 0; i < means.size(); ++i) {
    p.w.flat()[i] = 1.0 / stds.flat()[i];
    p.b.flat()[i] = -means.flat()[i];
  }
  return p;
}

NetVladParams netvlad_from_centroids(const Matrix& centroids, double scale) {
  NetVladParams p{centroids, Matrix(centroids.rows(), centroids.cols()), Matrix(1, centroids.rows())};
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    const auto mu = centroids.row(k);
    for (std::size_t d = 0; d < mu.size(); ++d) p.w(k, d) = 2.0 * scale * mu[d];
    p.b(0, k) = -scale * dot(mu, mu);
  }
  return p;
}

void init_encoder_from_data(Model& model, const Matrix& sample_frames, Rng& rng, double vlad_scale) {
  const EncoderKind kind = model.encoder_kind();
  if (kind == EncoderKind::kTap) return;
  const Matrix h = frontend_forward(model.frontend, sample_frames);
  const std::size_t k = model.clusters();
  const KmeansCodebook cb = kmeans_fit(h, k, rng, 25);
  if (kind == EncoderKind::kNetFv) {
    EmOptions opts;
    opts.max_iters = 25;
    opts.sigma_floor = default_sigma_floor(h);
    const GmmFit fit = gmm_fit_em(h, cb, opts);
    model.encoder = netfv_from_gmm(fit.model.means, fit.model.stds);
  } else {
    model.encoder = netvlad_from_centroids(cb.centroids, vlad_scale);
  }
}

namespace {

std::vector<double> encode_features(const Model& model, const Matrix& h) {
  return std::visit(
      Overloaded{[&](const TapParams&) {
                   const auto raw = tap_forward(h);
                   return normalize(raw.values, raw.layout.dim, model.norm);
                 },
                 [&](const NetFvParams& p) { return netfv_forward(p, h, model.norm).values; },
                 [&](const NetVladParams& p) { return netvlad_forward(p, h, model.norm).values; }},
      model.encoder);
}

}  // namespace

std::vector<double> encode(const Model& model, const Matrix& frames) {
  return encode_features(model, frontend_forward(model.frontend, frames));
}

std::vector<double> forward_scores(const Model& model, const Matrix& frames) {
  return classifier_forward(model.classifier, encode(model, frames));
}

double accumulate_gradients(const Model& model, const Matrix& frames, std::size_t label, double weight,
                            Model& grads, std::vector<double>* scores_out) {
  const FrontEndCache cache = frontend_forward_cached(model.frontend, frames);
  const Matrix& h = cache.output;
  NetFvCache fv_cache;
  NetVladCache vlad_cache;
  const std::vector<double> enc = std::visit(
      Overloaded{[&](const TapParams&) { return encode_features(model, h); },
                 [&](const NetFvParams& p) { return netfv_forward(p, h, model.norm, &fv_cache).values; },
                 [&](const NetVladParams& p) { return netvlad_forward(p, h, model.norm, &vlad_cache).values; }},
      model.encoder);
  std::vector<double> scores = classifier_forward(model.classifier, enc);
  XentResult xent = softmax_xent(scores, label);
  for (double& g : xent.grad) g *= weight;

  const ClassifierGrads cg = classifier_backward(model.classifier, enc, xent.grad);
  add_scaled(cg.weight, 1.0, grads.classifier.weight);
  add_scaled(cg.bias, 1.0, grads.classifier.bias);

  Matrix dh = std::visit(
      Overloaded{[&](const TapParams&) {
                   const auto raw = tap_forward(h);
                   const auto g = normalize_backward(raw.values, raw.layout.dim, model.norm, cg.encoding);
                   return tap_backward(h.rows(), g);
                 },
                 [&](const NetFvParams& p) {
                   NetFvGrads g = netfv_backward(p, h, cg.encoding, model.norm, &fv_cache);
                   auto& dst = std::get<NetFvParams>(grads.encoder);
                   add_scaled(g.w, 1.0, dst.w);
                   add_scaled(g.b, 1.0, dst.b);
                   return std::move(g.frames);
                 },
                 [&](const NetVladParams& p) {
                   NetVladGrads g = netvlad_backward(p, h, cg.encoding, model.norm, &vlad_cache);
                   auto& dst = std::get<NetVladParams>(grads.encoder);
                   add_scaled(g.mu, 1.0, dst.mu);
                   add_scaled(g.w, 1.0, dst.w);
                   add_scaled(g.b, 1.0, dst.b);
                   return std::move(g.frames);
                 }},
      model.encoder);

  const FrontEndGrads fg = frontend_backward(model.frontend, cache, dh);
  for (std::size_t l = 0; l < fg.layers.size(); ++l) {
    add_scaled(fg.layers[l].weight, 1.0, grads.frontend.layers[l].weight);
    add_scaled(fg.layers[l].bias, 1.0, grads.frontend.layers[l].bias);
  }
  if (scores_out) *scores_out = std::move(scores);
  return xent.loss;
}

}  // namespace seqenc
