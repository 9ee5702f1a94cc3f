#include <doctest.h>

#include <cmath>

#include "seqenc/error.hpp"
#include "seqenc/gradcheck.hpp"
#include "seqenc/model.hpp"

using namespace seqenc;

namespace {

ModelSpec small_spec(EncoderKind kind) {
  ModelSpec s;
  s.input_dim = 3;
  s.hidden = {5};
  s.channels = 4;
  s.encoder = kind;
  s.clusters = 2;
  s.norm = default_norm(kind);
  s.classes = 3;
  return s;
}

}  // namespace

TEST_CASE("gradcheck targets stay within tolerance on a handful of seeds") {
  const GradCheckTarget layers[] = {GradCheckTarget::kTap,         GradCheckTarget::kNetFv,
                                    GradCheckTarget::kNetVladNone, GradCheckTarget::kNetVladIntra,
                                    GradCheckTarget::kFrontEnd,    GradCheckTarget::kClassifier,
                                    GradCheckTarget::kSoftmaxXent};
  const GradCheckTarget pipelines[] = {GradCheckTarget::kPipelineTap, GradCheckTarget::kPipelineNetFv,
                                       GradCheckTarget::kPipelineNetVlad};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (auto t : layers) {
      const GradCheckStats s = run_gradcheck(t, seed);
      INFO(to_string(t), " seed ", seed, " worst ", s.worst);
      CHECK(s.coordinates > 0);
      CHECK(s.max_rel_error < 1e-6);
    }
    for (auto t : pipelines) {
      const GradCheckStats s = run_gradcheck(t, seed);
      INFO(to_string(t), " seed ", seed, " worst ", s.worst);
      CHECK(s.max_rel_error < 1e-5);
    }
  }
}

TEST_CASE("relative error uses a floor for tiny gradients") {
  CHECK(gradient_relative_error(1.0, 1.0) == 0.0);
  CHECK(gradient_relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(gradient_relative_error(1e-9, 0.0) == doctest::Approx(1e-6));
}

TEST_CASE("init_model shapes") {
  for (EncoderKind kind : {EncoderKind::kTap, EncoderKind::kNetFv, EncoderKind::kNetVlad}) {
    Rng rng(1);
    const Model m = init_model(small_spec(kind), rng);
    CHECK_NOTHROW(m.validate());
    CHECK(m.encoder_kind() == kind);
    CHECK(m.channels() == 4);
    const std::size_t expected = kind == EncoderKind::kTap ? 4 : kind == EncoderKind::kNetFv ? 16 : 8;
    CHECK(m.encoding_size() == expected);
    CHECK(m.classifier.input_dim() == expected);
    CHECK(m.tensors().size() == m.tensor_names().size());
    const Model z = m.zeros_like();
    for (const Matrix* t : z.tensors())
      for (double v : t->flat()) CHECK(v == 0.0);

    Rng a(9), b(9);
    CHECK(init_model(small_spec(kind), a).classifier.weight == init_model(small_spec(kind), b).classifier.weight);
  }
  ModelSpec bad = small_spec(EncoderKind::kNetVlad);
  bad.input_dim = 0;
  Rng rng(2);
  CHECK_THROWS_AS(init_model(bad, rng), Error);
}

TEST_CASE("canonical encoder parameters") {
  const Matrix means = Matrix::from_rows({{1.0, -2.0}, {0.5, 0.0}});
  const Matrix stds = Matrix::from_rows({{2.0, 0.5}, {1.0, 4.0}});
  const NetFvParams fv = netfv_from_gmm(means, stds);
  CHECK(fv.w(0, 0) == 0.5);
  CHECK(fv.w(1, 1) == 0.25);
  CHECK(fv.b(0, 1) == 2.0);

  const NetVladParams vl = netvlad_from_centroids(means, 3.0);
  CHECK(vl.mu == means);
  CHECK(vl.w(0, 1) == -12.0);
  CHECK(vl.b(0, 0) == -15.0);
  CHECK(vl.b(0, 1) == -0.75);
}

TEST_CASE("init_encoder_from_data places netfv at a fitted gmm") {
  Rng rng(3);
  Model m = init_model(small_spec(EncoderKind::kNetFv), rng);
  const Matrix sample = gaussian_sample(rng, 400, 3, 0.0, 1.0);
  init_encoder_from_data(m, sample, rng);
  const auto& p = std::get<NetFvParams>(m.encoder);
  for (double w : p.w.flat()) CHECK(w > 0.0);
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("default normalisation per encoder") {
  CHECK(default_norm(EncoderKind::kNetVlad) == NormScheme::intra_l2_then_l2());
  CHECK(default_norm(EncoderKind::kNetFv) == NormScheme::none());
  CHECK(default_norm(EncoderKind::kTap) == NormScheme::none());
}

TEST_CASE("accumulate_gradients weights the gradient and reports the loss") {
  Rng rng(4);
  const Model m = init_model(small_spec(EncoderKind::kNetVlad), rng);
  const Matrix x = gaussian_sample(rng, 7, 3, 0.0, 1.0);
  Model g1 = m.zeros_like(), g2 = m.zeros_like();
  std::vector<double> scores;
  const double loss = accumulate_gradients(m, x, 1, 1.0, g1, &scores);
  accumulate_gradients(m, x, 1, 0.5, g2);
  CHECK(scores == forward_scores(m, x));
  const double lse = std::log(std::exp(scores[0]) + std::exp(scores[1]) + std::exp(scores[2]));
  CHECK(loss == doctest::Approx(lse - scores[1]).epsilon(1e-13));
  const auto t1 = g1.tensors();
  const auto t2 = g2.tensors();
  for (std::size_t i = 0; i < t1.size(); ++i)
    for (std::size_t j = 0; j < t1[i]->size(); ++j)
      CHECK(t2[i]->flat()[j] == doctest::Approx(0.5 * t1[i]->flat()[j]).epsilon(1e-14));
}
