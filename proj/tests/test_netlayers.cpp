#include <doctest.h>

#include <cmath>

#include "seqenc/classical.hpp"
#include "seqenc/error.hpp"
#include "seqenc/gradcheck.hpp"
#include "seqenc/model.hpp"
#include "seqenc/netlayers.hpp"

using namespace seqenc;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double std = 1.0) {
  return gaussian_sample(rng, r, c, 0.0, std);
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  const Matrix m = random_matrix(rng, 1, n);
  return {m.flat().begin(), m.flat().end()};
}

double dot_vec(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

NetFvParams random_netfv(Rng& rng, std::size_t k, std::size_t d) {
  NetFvParams p{random_matrix(rng, k, d, 0.3), random_matrix(rng, k, d)};
  for (double& w : p.w.flat()) w += 1.0;
  return p;
}

NetVladParams random_netvlad(Rng& rng, std::size_t k, std::size_t d) {
  return {random_matrix(rng, k, d), random_matrix(rng, k, d, 0.5), random_matrix(rng, 1, k, 0.5)};
}

bool all_zero(const Matrix& m) {
  for (double v : m.flat())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("tap examples") {
  const Matrix constant = Matrix::from_rows({{1.5, -2.0}, {1.5, -2.0}, {1.5, -2.0}});
  CHECK(tap_forward(constant).values == std::vector<double>{1.5, -2.0});

  Rng rng(1);
  const Matrix x = random_matrix(rng, 5, 3);
  const auto t = tap_forward(x).values;
  for (std::size_t d = 0; d < 3; ++d) {
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i) s += x(i, d);
    CHECK(t[d] == doctest::Approx(s / 5.0).epsilon(1e-15));
  }
  const Matrix reversed = Matrix::from_rows({{x(4, 0), x(4, 1), x(4, 2)},
                                             {x(3, 0), x(3, 1), x(3, 2)},
                                             {x(2, 0), x(2, 1), x(2, 2)},
                                             {x(1, 0), x(1, 1), x(1, 2)},
                                             {x(0, 0), x(0, 1), x(0, 2)}});
  const auto tr = tap_forward(reversed).values;
  for (std::size_t d = 0; d < 3; ++d) CHECK(tr[d] == doctest::Approx(t[d]).epsilon(1e-15));
  CHECK_THROWS_AS(tap_forward(Matrix(0, 3)), Error);

  const Matrix g = tap_backward(4, std::vector<double>{4.0, 8.0});
  CHECK(g.rows() == 4);
  CHECK(g(2, 1) == 2.0);
}

TEST_CASE("netfv with one cluster") {
  Rng rng(2);
  const NetFvParams p = random_netfv(rng, 1, 3);
  const Matrix x = random_matrix(rng, 9, 3);
  const Matrix gamma = netfv_posteriors(p, x);
  for (double g : gamma.flat()) CHECK(g == 1.0);
  const auto out = netfv_forward(p, x).values;
  REQUIRE(out.size() == 6);
  for (std::size_t d = 0; d < 3; ++d) {
    double mean = 0.0, sigma = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
      const double z = p.w(0, d) * (x(i, d) + p.b(0, d));
      mean += z / 9.0;
      sigma += (z * z - 1.0) / std::sqrt(2.0) / 9.0;
    }
    CHECK(out[d] == doctest::Approx(mean).epsilon(1e-13));
    CHECK(out[3 + d] == doctest::Approx(sigma).epsilon(1e-13));
  }
}

TEST_CASE("netfv at canonical init matches the equal-weight fisher vector") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 50);
    const std::size_t k = 1 + rng.uniform_int(4), d = 1 + rng.uniform_int(5);
    DiagonalGmm g{std::vector<double>(k, 1.0 / static_cast<double>(k)), random_matrix(rng, k, d), Matrix(k, d)};
    for (double& s : g.stds.flat()) s = 0.5 + rng.uniform();
    const Matrix x = random_matrix(rng, 1 + rng.uniform_int(30), d, 1.5);
    FisherVectorOptions opts;
    opts.posterior = FisherVectorOptions::Posterior::kEqualWeightScaled;
    opts.weight_whitening = false;
    const auto classical = fisher_vector(g, x, opts).values;
    const auto net = netfv_forward(netfv_from_gmm(g.means, g.stds), x).values;
    REQUIRE(net.size() == classical.size());
    for (std::size_t i = 0; i < net.size(); ++i) CHECK(std::abs(net[i] - classical[i]) < 1e-10);
  }
}

TEST_CASE("netfv duplication and permutation invariance") {
  Rng rng(3);
  const NetFvParams p = random_netfv(rng, 3, 2);
  const Matrix x = random_matrix(rng, 6, 2);
  const auto base = netfv_forward(p, x).values;
  const auto dup = netfv_forward(p, vstack(x, x)).values;
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(dup[i] == doctest::Approx(base[i]).epsilon(1e-12));
  Matrix swapped = x;
  for (std::size_t c = 0; c < 2; ++c) std::swap(swapped(0, c), swapped(5, c));
  const auto perm = netfv_forward(p, swapped).values;
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(perm[i] == doctest::Approx(base[i]).epsilon(1e-12));
}

TEST_CASE("netfv backward") {
  Rng rng(4);
  const std::size_t l = 7, d = 4, k = 3;

  SUBCASE("zero upstream gives zero gradients") {
    const NetFvParams p = random_netfv(rng, k, d);
    const Matrix x = random_matrix(rng, l, d);
    const NetFvGrads g = netfv_backward(p, x, std::vector<double>(2 * k * d, 0.0));
    CHECK(all_zero(g.w));
    CHECK(all_zero(g.b));
    CHECK(all_zero(g.frames));
  }

  SUBCASE("finite differences") {
    GradCheckStats stats;
    for (int trial = 0; trial < 20; ++trial) {
      NetFvParams p = random_netfv(rng, k, d);
      Matrix x = random_matrix(rng, l, d);
      const auto up = random_vector(rng, 2 * k * d);
      const NetFvGrads g = netfv_backward(p, x, up);
      auto loss = [&] { return dot_vec(netfv_forward(p, x).values, up); };
      compare_with_finite_differences(p.w.flat(), g.w.flat(), loss, "w", stats);
      compare_with_finite_differences(p.b.flat(), g.b.flat(), loss, "b", stats);
      compare_with_finite_differences(x.flat(), g.frames.flat(), loss, "x", stats);
    }
    CHECK(stats.max_rel_error < 1e-6);
  }

  SUBCASE("closed form for one frame and one cluster") {
    const NetFvParams p = random_netfv(rng, 1, d);
    const Matrix x = random_matrix(rng, 1, d);
    const NetFvGrads g = netfv_backward(p, x, std::vector<double>(2 * d, 1.0));
    // loss = sum_d z_d + (z_d^2 - 1)/sqrt(2), z = w (x + b)
    for (std::size_t j = 0; j < d; ++j) {
      const double u = x(0, j) + p.b(0, j);
      const double z = p.w(0, j) * u;
      CHECK(g.w(0, j) == doctest::Approx(u + std::sqrt(2.0) * z * u).epsilon(1e-13));
      CHECK(g.b(0, j) == doctest::Approx(p.w(0, j) + std::sqrt(2.0) * z * p.w(0, j)).epsilon(1e-13));
    }
  }

  CHECK_THROWS_AS(netfv_backward(random_netfv(rng, k, d), random_matrix(rng, l, d), std::vector<double>(3, 0.0)),
                  Error);
}

TEST_CASE("netvlad with one zero anchor is sum pooling") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t l = 1 + rng.uniform_int(40), d = 1 + rng.uniform_int(6);
    const NetVladParams p{Matrix(1, d), random_matrix(rng, 1, d), random_matrix(rng, 1, 1)};
    const Matrix x = random_matrix(rng, l, d);
    const auto v = netvlad_forward(p, x, NormScheme::none()).values;
    const auto t = tap_forward(x).values;
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(v[j] - static_cast<double>(l) * t[j]) < 1e-12);
  }
}

TEST_CASE("netvlad assignments are a distribution") {
  Rng rng(6);
  const NetVladParams p = random_netvlad(rng, 4, 3);
  const Matrix beta = netvlad_assignments(p, random_matrix(rng, 25, 3, 3.0));
  for (std::size_t i = 0; i < beta.rows(); ++i) {
    double s = 0.0;
    for (double b : beta.row(i)) s += b;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("netvlad approaches classical vlad in the hard-assignment limit") {
  Rng rng(7);
  const Matrix centroids = Matrix::from_rows({{0.0, 0.0}, {5.0, 0.0}, {0.0, 5.0}});
  Matrix x(30, 2);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t d = 0; d < 2; ++d) x(i, d) = centroids(i % 3, d) + 0.5 * rng.normal();
  const auto net = netvlad_forward(netvlad_from_centroids(centroids, 100.0), x, NormScheme::none()).values;
  const auto hard = vlad(centroids, x).values;
  for (std::size_t i = 0; i < hard.size(); ++i) CHECK(std::abs(net[i] - hard[i]) < 1e-6);
}

TEST_CASE("netvlad is additive over concatenation") {
  Rng rng(8);
  const NetVladParams p = random_netvlad(rng, 3, 2);
  const Matrix x = random_matrix(rng, 5, 2), y = random_matrix(rng, 4, 2);
  const auto vx = netvlad_forward(p, x, NormScheme::none()).values;
  const auto vy = netvlad_forward(p, y, NormScheme::none()).values;
  const auto vxy = netvlad_forward(p, vstack(x, y), NormScheme::none()).values;
  for (std::size_t i = 0; i < vxy.size(); ++i) CHECK(vxy[i] == doctest::Approx(vx[i] + vy[i]).epsilon(1e-12));
}

TEST_CASE("netvlad backward") {
  Rng rng(9);
  const std::size_t l = 6, d = 4, k = 3;
  {
    const NetVladParams p = random_netvlad(rng, k, d);
    const NetVladGrads g =
        netvlad_backward(p, random_matrix(rng, l, d), std::vector<double>(k * d, 0.0), NormScheme::none());
    CHECK(all_zero(g.mu));
    CHECK(all_zero(g.w));
    CHECK(all_zero(g.b));
    CHECK(all_zero(g.frames));
  }
  for (const auto& [scheme, tol] : {std::pair{NormScheme::none(), 1e-6}, std::pair{NormScheme::intra_l2_then_l2(), 1e-5}}) {
    GradCheckStats stats;
    for (int trial = 0; trial < 20; ++trial) {
      NetVladParams p = random_netvlad(rng, k, d);
      Matrix x = random_matrix(rng, l, d);
      const auto up = random_vector(rng, k * d);
      const NetVladGrads g = netvlad_backward(p, x, up, scheme);
      auto loss = [&] { return dot_vec(netvlad_forward(p, x, scheme).values, up); };
      compare_with_finite_differences(p.mu.flat(), g.mu.flat(), loss, "mu", stats);
      compare_with_finite_differences(p.w.flat(), g.w.flat(), loss, "w", stats);
      compare_with_finite_differences(p.b.flat(), g.b.flat(), loss, "b", stats);
      compare_with_finite_differences(x.flat(), g.frames.flat(), loss, "x", stats);
    }
    CHECK(stats.max_rel_error < tol);
  }
}

TEST_CASE("encoders produce a fixed-size output") {
  Rng rng(10);
  const NetFvParams fv = random_netfv(rng, 4, 3);
  const NetVladParams vl = random_netvlad(rng, 4, 3);
  for (std::size_t l : {1u, 50u, 200u, 1024u}) {
    const Matrix x = random_matrix(rng, l, 3);
    CHECK(tap_forward(x).size() == 3);
    CHECK(netfv_forward(fv, x).size() == 24);
    CHECK(netvlad_forward(vl, x, NormScheme::intra_l2_then_l2()).size() == 12);
  }
}

TEST_CASE("front-end examples") {
  Matrix eye(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  const FrontEndParams identity{{AffineLayer{eye, Matrix(1, 3)}}, Activation::kIdentity};
  Rng rng(11);
  const Matrix x = random_matrix(rng, 4, 3);
  CHECK(frontend_forward(identity, x) == x);

  const Matrix bias = Matrix::from_rows({{0.5, -1.0}});
  for (Activation act : {Activation::kTanh, Activation::kIsru}) {
    const FrontEndParams zero{{AffineLayer{Matrix(3, 2), bias}}, act};
    const Matrix y = frontend_forward(zero, x);
    CHECK(y.rows() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      const double expected0 = act == Activation::kTanh ? std::tanh(0.5) : 0.5 / std::sqrt(1.25);
      CHECK(y(i, 0) == doctest::Approx(expected0).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(frontend_forward(identity, random_matrix(rng, 4, 2)), Error);
}

TEST_CASE("front-end backward matches finite differences") {
  Rng rng(12);
  for (Activation act : {Activation::kIdentity, Activation::kTanh, Activation::kIsru}) {
    GradCheckStats stats;
    for (int trial = 0; trial < 10; ++trial) {
      FrontEndParams p{{AffineLayer{random_matrix(rng, 4, 5, 0.5), random_matrix(rng, 1, 5, 0.1)},
                        AffineLayer{random_matrix(rng, 5, 3, 0.5), random_matrix(rng, 1, 3, 0.1)}},
                       act};
      Matrix x = random_matrix(rng, 6, 4);
      const Matrix up = random_matrix(rng, 6, 3);
      const FrontEndGrads g = frontend_backward(p, frontend_forward_cached(p, x), up);
      auto loss = [&] {
        const Matrix y = frontend_forward(p, x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y.flat()[i] * up.flat()[i];
        return s;
      };
      for (std::size_t l = 0; l < 2; ++l) {
        compare_with_finite_differences(p.layers[l].weight.flat(), g.layers[l].weight.flat(), loss, "W", stats);
        compare_with_finite_differences(p.layers[l].bias.flat(), g.layers[l].bias.flat(), loss, "b", stats);
      }
      compare_with_finite_differences(x.flat(), g.frames.flat(), loss, "x", stats);
    }
    CHECK(stats.max_rel_error < 1e-6);
  }
}

TEST_CASE("classifier examples") {
  const ClassifierParams zero{Matrix(3, 2), Matrix::from_rows({{1.0, -2.0, 0.5}})};
  CHECK(classifier_forward(zero, std::vector<double>{7.0, 9.0}) == std::vector<double>{1.0, -2.0, 0.5});

  Matrix eye(2, 2);
  eye(0, 0) = eye(1, 1) = 1.0;
  const ClassifierParams id{eye, Matrix::from_rows({{0.25, 0.5}})};
  CHECK(classifier_forward(id, std::vector<double>{1.0, 2.0}) == std::vector<double>{1.25, 2.5});

  Rng rng(13);
  ClassifierParams p{random_matrix(rng, 4, 6), random_matrix(rng, 1, 4)};
  auto e = random_vector(rng, 6);
  const auto s = classifier_forward(p, e);
  for (std::size_t c = 0; c < 4; ++c) {
    double ref = p.bias(0, c);
    for (std::size_t j = 0; j < 6; ++j) ref += p.weight(c, j) * e[j];
    CHECK(s[c] == doctest::Approx(ref).epsilon(1e-14));
  }
  CHECK_THROWS_AS(classifier_forward(p, std::vector<double>(5, 0.0)), Error);

  const auto up = random_vector(rng, 4);
  const ClassifierGrads g = classifier_backward(p, e, up);
  GradCheckStats stats;
  auto loss = [&] { return dot_vec(classifier_forward(p, e), up); };
  compare_with_finite_differences(p.weight.flat(), g.weight.flat(), loss, "W", stats);
  compare_with_finite_differences(p.bias.flat(), g.bias.flat(), loss, "b", stats);
  compare_with_finite_differences(e, g.encoding, loss, "e", stats);
  CHECK(stats.max_rel_error < 1e-6);
}

TEST_CASE("softmax cross-entropy") {
  const XentResult uniform = softmax_xent(std::vector<double>(4, 0.3), 2);
  CHECK(uniform.loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(uniform.grad[2] == doctest::Approx(-0.75).epsilon(1e-15));

  const XentResult confident = softmax_xent(std::vector<double>{0.0, 1000.0, 0.0}, 1);
  CHECK(std::isfinite(confident.loss));
  CHECK(confident.loss < 1e-12);
  for (double g : confident.grad) CHECK(std::isfinite(g));

  CHECK_THROWS_AS(softmax_xent(std::vector<double>(3, 0.0), 3), Error);

  Rng rng(14);
  GradCheckStats stats;
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_vector(rng, 5);
    const std::size_t label = rng.uniform_int(5);
    const XentResult r = softmax_xent(s, label);
    compare_with_finite_differences(s, r.grad, [&] { return softmax_xent(s, label).loss; }, "s", stats);
  }
  CHECK(stats.max_rel_error < 1e-8);

  const auto ls = log_softmax(std::vector<double>{1.0, 2.0, 3.0});
  double total = 0.0;
  for (double v : ls) total += std::exp(v);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
}
