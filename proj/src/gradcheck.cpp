#include "seqenc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "seqenc/error.hpp"
#include "seqenc/model.hpp"
#include "seqenc/netlayers.hpp"
#include "seqenc/numcore.hpp"

namespace seqenc {

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

void GradCheckStats::merge(const GradCheckStats& other) {
  if (other.max_rel_error > max_rel_error || (worst.empty() && !other.worst.empty())) {
    max_rel_error = std::max(max_rel_error, other.max_rel_error);
    worst = other.worst;
  }
  max_abs_error = std::max(max_abs_error, other.max_abs_error);
  coordinates += other.coordinates;
}

void compare_with_finite_differences(std::span<double> values, std::span<const double> analytic,
                                     const std::function<double()>& loss, std::string_view name,
                                     GradCheckStats& stats, double h) {
  if (values.size() != analytic.size()) throw Error(ErrorCode::kShapeMismatch, "gradient shape mismatch");
  for (std::size_t j = 0; j < values.size(); ++j) {
    const double saved = values[j];
    values[j] = saved + h;
    const double up = loss();
    values[j] = saved - h;
    const double down = loss();
    values[j] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double rel = gradient_relative_error(analytic[j], numeric);
    const double abs_err = std::abs(analytic[j] - numeric);
    ++stats.coordinates;
    stats.max_abs_error = std::max(stats.max_abs_error, abs_err);
    if (rel > stats.max_rel_error || stats.worst.empty() || std::isnan(rel)) {
      stats.max_rel_error = std::isnan(rel) ? INFINITY : std::max(stats.max_rel_error, rel);
      stats.worst = std::string(name) + "[" + std::to_string(j) + "]";
    }
  }
}

std::string to_string(GradCheckTarget t) {
  switch (t) {
    case GradCheckTarget::kTap: return "tap";
    case GradCheckTarget::kNetFv: return "netfv";
    case GradCheckTarget::kNetVladNone: return "netvlad(none)";
    case GradCheckTarget::kNetVladIntra: return "netvlad(intra_l2_then_l2)";
    case GradCheckTarget::kFrontEnd: return "frontend";
    case GradCheckTarget::kClassifier: return "classifier";
    case GradCheckTarget::kSoftmaxXent: return "softmax_xent";
    case GradCheckTarget::kPipelineTap: return "pipeline(tap)";
    case GradCheckTarget::kPipelineNetFv: return "pipeline(netfv)";
    case GradCheckTarget::kPipelineNetVlad: return "pipeline(netvlad)";
  }
  return "unknown";
}

namespace {

struct Dims {
  std::size_t frames, dim, clusters;
};

Dims random_dims(Rng& rng) {
  return {1 + rng.uniform_int(8), 1 + rng.uniform_int(5), 1 + rng.uniform_int(4)};
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

GradCheckStats check_netfv(Rng& rng) {
  const Dims dims = random_dims(rng);
  Matrix x = gaussian_sample(rng, dims.frames, dims.dim, 0.0, 1.0);
  NetFvParams p{gaussian_sample(rng, dims.clusters, dims.dim, 1.0, 0.3),
                gaussian_sample(rng, dims.clusters, dims.dim, 0.0, 1.0)};
  const auto u = random_vector(rng, 2 * dims.clusters * dims.dim);
  auto loss = [&] { return dot(u, netfv_forward(p, x).values); };
  const NetFvGrads g = netfv_backward(p, x, u);
  GradCheckStats s;
  compare_with_finite_differences(p.w.flat(), g.w.flat(), loss, "netfv.w", s);
  compare_with_finite_differences(p.b.flat(), g.b.flat(), loss, "netfv.b", s);
  compare_with_finite_differences(x.flat(), g.frames.flat(), loss, "netfv.frames", s);
  return s;
}

GradCheckStats check_netvlad(Rng& rng, const NormScheme& scheme) {
  const Dims dims = random_dims(rng);
  Matrix x = gaussian_sample(rng, dims.frames, dims.dim, 0.0, 1.0);
  NetVladParams p{gaussian_sample(rng, dims.clusters, dims.dim, 0.0, 1.0),
                  gaussian_sample(rng, dims.clusters, dims.dim, 0.0, 0.7),
                  gaussian_sample(rng, 1, dims.clusters, 0.0, 0.5)};
  const auto u = random_vector(rng, dims.clusters * dims.dim);
  auto loss = [&] { return dot(u, netvlad_forward(p, x, scheme).values); };
  const NetVladGrads g = netvlad_backward(p, x, u, scheme);
  GradCheckStats s;
  compare_with_finite_differences(p.mu.flat(), g.mu.flat(), loss, "netvlad.mu", s);
  compare_with_finite_differences(p.w.flat(), g.w.flat(), loss, "netvlad.w", s);
  compare_with_finite_differences(p.b.flat(), g.b.flat(), loss, "netvlad.b", s);
  compare_with_finite_differences(x.flat(), g.frames.flat(), loss, "netvlad.frames", s);
  return s;
}

GradCheckStats check_tap(Rng& rng) {
  const Dims dims = random_dims(rng);
  Matrix x = gaussian_sample(rng, dims.frames, dims.dim, 0.0, 1.0);
  const auto u = random_vector(rng, dims.dim);
  auto loss = [&] { return dot(u, tap_forward(x).values); };
  const Matrix g = tap_backward(x.rows(), u);
  GradCheckStats s;
  compare_with_finite_differences(x.flat(), g.flat(), loss, "tap.frames", s);
  return s;
}

FrontEndParams random_frontend(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out) {
  FrontEndParams p;
  p.activation = Activation::kTanh;
  p.layers.push_back({gaussian_sample(rng, in, hidden, 0.0, 0.6), gaussian_sample(rng, 1, hidden, 0.0, 0.3)});
  p.layers.push_back({gaussian_sample(rng, hidden, out, 0.0, 0.6), gaussian_sample(rng, 1, out, 0.0, 0.3)});
  return p;
}

GradCheckStats check_frontend(Rng& rng) {
  const Dims dims = random_dims(rng);
  const std::size_t hidden = 1 + rng.uniform_int(6);
  const std::size_t out = 1 + rng.uniform_int(5);
  Matrix x = gaussian_sample(rng, dims.frames, dims.dim, 0.0, 1.0);
  FrontEndParams p = random_frontend(rng, dims.dim, hidden, out);
  const Matrix u = gaussian_sample(rng, dims.frames, out, 0.0, 1.0);
  auto loss = [&] { return dot(u.flat(), frontend_forward(p, x).flat()); };
  const FrontEndGrads g = frontend_backward(p, frontend_forward_cached(p, x), u);
  GradCheckStats s;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    compare_with_finite_differences(p.layers[l].weight.flat(), g.layers[l].weight.flat(), loss,
                                    "frontend." + std::to_string(l) + ".weight", s);
    compare_with_finite_differences(p.layers[l].bias.flat(), g.layers[l].bias.flat(), loss,
                                    "frontend." + std::to_string(l) + ".bias", s);
  }
  compare_with_finite_differences(x.flat(), g.frames.flat(), loss, "frontend.frames", s);
  return s;
}

GradCheckStats check_classifier(Rng& rng) {
  const std::size_t e = 1 + rng.uniform_int(10);
  const std::size_t c = 2 + rng.uniform_int(4);
  ClassifierParams p{gaussian_sample(rng, c, e, 0.0, 1.0), gaussian_sample(rng, 1, c, 0.0, 1.0)};
  auto enc = random_vector(rng, e);
  const auto u = random_vector(rng, c);
  auto loss = [&] { return dot(u, classifier_forward(p, enc)); };
  const ClassifierGrads g = classifier_backward(p, enc, u);
  GradCheckStats s;
  compare_with_finite_differences(p.weight.flat(), g.weight.flat(), loss, "classifier.weight", s);
  compare_with_finite_differences(p.bias.flat(), g.bias.flat(), loss, "classifier.bias", s);
  compare_with_finite_differences(enc, g.encoding, loss, "classifier.encoding", s);
  return s;
}

GradCheckStats check_xent(Rng& rng) {
  const std::size_t c = 2 + rng.uniform_int(6);
  auto scores = random_vector(rng, c);
  for (double& v : scores) v *= 3.0;
  const std::size_t label = rng.uniform_int(c);
  auto loss = [&] { return softmax_xent(scores, label).loss; };
  const auto r = softmax_xent(scores, label);
  GradCheckStats s;
  compare_with_finite_differences(scores, r.grad, loss, "xent.scores", s);
  return s;
}

GradCheckStats check_pipeline(Rng& rng, EncoderKind kind) {
  const Dims dims = random_dims(rng);
  ModelSpec spec;
  spec.input_dim = dims.dim;
  spec.hidden = {1 + rng.uniform_int(5)};
  spec.channels = 1 + rng.uniform_int(5);
  spec.encoder = kind;
  spec.clusters = dims.clusters;
  spec.norm = default_norm(kind);
  spec.classes = 2 + rng.uniform_int(3);
  Model m = init_model(spec, rng);
  m.frontend = random_frontend(rng, dims.dim, spec.hidden[0], spec.channels);
  m.classifier.weight = gaussian_sample(rng, spec.classes, m.encoding_size(), 0.0, 1.0);
  Matrix x = gaussian_sample(rng, dims.frames, dims.dim, 0.0, 1.0);
  const std::size_t label = rng.uniform_int(spec.classes);

  auto loss = [&] { return softmax_xent(forward_scores(m, x), label).loss; };
  Model grads = m.zeros_like();
  accumulate_gradients(m, x, label, 1.0, grads);

  GradCheckStats s;
  auto params = m.tensors();
  auto gparams = grads.tensors();
  const auto names = m.tensor_names();
  for (std::size_t t = 0; t < params.size(); ++t)
    compare_with_finite_differences(params[t]->flat(), gparams[t]->flat(), loss, names[t], s);
  return s;
}

}  // namespace

GradCheckStats run_gradcheck(GradCheckTarget target, std::uint64_t seed) {
  Rng rng(seed, static_cast<std::uint64_t>(target) + 101);
  switch (target) {
    case GradCheckTarget::kTap: return check_tap(rng);
    case GradCheckTarget::kNetFv: return check_netfv(rng);
    case GradCheckTarget::kNetVladNone: return check_netvlad(rng, NormScheme::none());
    case GradCheckTarget::kNetVladIntra: return check_netvlad(rng, NormScheme::intra_l2_then_l2());
    case GradCheckTarget::kFrontEnd: return check_frontend(rng);
    case GradCheckTarget::kClassifier: return check_classifier(rng);
    case GradCheckTarget::kSoftmaxXent: return check_xent(rng);
    case GradCheckTarget::kPipelineTap: return check_pipeline(rng, EncoderKind::kTap);
    case GradCheckTarget::kPipelineNetFv: return check_pipeline(rng, EncoderKind::kNetFv);
    case GradCheckTarget::kPipelineNetVlad: return check_pipeline(rng, EncoderKind::kNetVlad);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown gradcheck target");
}

}  // namespace seqenc
