#include <doctest.h>

#include <cmath>

#include "seqenc/encoding.hpp"
#include "seqenc/error.hpp"
#include "seqenc/gradcheck.hpp"
#include "seqenc/numcore.hpp"

using namespace seqenc;

namespace {

double l2norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

const NormScheme kAllSchemes[] = {NormScheme::none(), NormScheme::l2(), NormScheme::intra_l2_then_l2(),
                                  NormScheme::signed_power_then_l2(0.5), NormScheme::signed_power_then_l2(0.3)};

}  // namespace

TEST_CASE("normalisation examples") {
  const std::vector<double> v = {3.0, 4.0};
  const auto l2 = normalize(v, 2, NormScheme::l2());
  CHECK(l2[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(l2[1] == doctest::Approx(0.8).epsilon(1e-15));

  const std::vector<double> zero(6, 0.0);
  for (const NormScheme& s : kAllSchemes) {
    const auto out = normalize(zero, 3, s);
    for (double x : out) CHECK(x == 0.0);
  }

  const auto sp = normalize(std::vector<double>{4.0, -9.0}, 2, NormScheme::signed_power_then_l2(0.5));
  CHECK(std::abs(sp[0] - 0.5547) < 1e-4);
  CHECK(std::abs(sp[1] + 0.8321) < 1e-4);
  CHECK(sp[0] == doctest::Approx(2.0 / std::sqrt(13.0)).epsilon(1e-14));

  CHECK_THROWS_AS(NormScheme::signed_power_then_l2(0.0), Error);
  CHECK_THROWS_AS(NormScheme::signed_power_then_l2(-1.0), Error);
}

TEST_CASE("intra normalisation treats a zero block as zero") {
  const std::vector<double> v = {0.0, 0.0, 1.0, 1.0};
  const auto out = normalize(v, 2, NormScheme::intra_l2_then_l2());
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
}

TEST_CASE("l2-terminated schemes produce unit norm") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix m = gaussian_sample(rng, 1, 12, 0.0, std::pow(10.0, rng.uniform() * 6 - 3));
    const std::vector<double> v(m.flat().begin(), m.flat().end());
    for (const NormScheme& s : kAllSchemes) {
      if (s.kind == NormScheme::Kind::kNone) {
        CHECK(normalize(v, 4, s) == v);
        continue;
      }
      CHECK(std::abs(l2norm(normalize(v, 4, s)) - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("normalisation backward matches finite differences") {
  Rng rng(2);
  GradCheckStats stats;
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix m = gaussian_sample(rng, 1, 6, 0.0, 1.0);
    std::vector<double> v(m.flat().begin(), m.flat().end());
    const Matrix up_m = gaussian_sample(rng, 1, 6, 0.0, 1.0);
    const std::vector<double> up(up_m.flat().begin(), up_m.flat().end());
    for (const NormScheme& s : kAllSchemes) {
      const auto grad = normalize_backward(v, 3, s, up);
      auto loss = [&] {
        const auto out = normalize(v, 3, s);
        double total = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) total += out[i] * up[i];
        return total;
      };
      compare_with_finite_differences(v, grad, loss, s.to_string(), stats);
    }
  }
  CHECK(stats.max_rel_error < 1e-6);
}

TEST_CASE("norm scheme strings round trip") {
  for (const NormScheme& s : kAllSchemes) CHECK(NormScheme::parse(s.to_string()) == s);
  CHECK(NormScheme::parse("signed_power_then_l2") == NormScheme::signed_power_then_l2(0.5));
  CHECK_THROWS_AS(NormScheme::parse("l3"), Error);
  CHECK_THROWS_AS(NormScheme::parse("signed_power_then_l2(x)"), Error);
}

TEST_CASE("layout sizes and descriptors") {
  EncodingLayout fv{EncoderKind::kNetFv, 4, 3, NormScheme::none()};
  CHECK(fv.expected_size() == 24);
  EncodingLayout vl{EncoderKind::kNetVlad, 4, 3, NormScheme::intra_l2_then_l2()};
  CHECK(vl.expected_size() == 12);
  EncodingLayout tap{EncoderKind::kTap, 1, 5, NormScheme::none()};
  CHECK(tap.expected_size() == 5);
  EncodingLayout sv{EncoderKind::kSupervector, 6, 2, NormScheme::l2()};
  CHECK(sv.expected_size() == 12);
  for (const auto& l : {fv, vl, tap, sv}) CHECK(EncodingLayout::parse(l.descriptor()) == l);
  CHECK(fv.block_order() != vl.block_order());
  CHECK_THROWS_AS(EncodingLayout::parse("nonsense"), Error);
}

TEST_CASE("encoder names round trip") {
  for (auto k : {EncoderKind::kSupervector, EncoderKind::kFisherVector, EncoderKind::kVlad, EncoderKind::kTap,
                 EncoderKind::kNetFv, EncoderKind::kNetVlad})
    CHECK(encoder_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(encoder_kind_from_string("lde"), Error);
}
