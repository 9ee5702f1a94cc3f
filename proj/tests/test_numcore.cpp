#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "seqenc/error.hpp"
#include "seqenc/numcore.hpp"

using namespace seqenc;

namespace {

// Softmax evaluated in long double without max subtraction.
std::vector<long double> softmax_oracle(const std::vector<long double>& v) {
  long double sum = 0.0L;
  for (long double x : v) sum += std::exp(x);
  std::vector<long double> out;
  for (long double x : v) out.push_back(std::exp(x) / sum);
  return out;
}

}  // namespace

TEST_CASE("matrix construction checks sizes") {
  Matrix m(2, 3, 1.5);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 1.5);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0, 2.0, 3.0}), Error);
  CHECK_THROWS_AS(Matrix::from_rows({{1.0, 2.0}, {3.0}}), Error);
}

TEST_CASE("matmul variants agree with a naive triple loop") {
  Rng rng(3);
  const Matrix a = gaussian_sample(rng, 4, 3, 0.0, 1.0);
  const Matrix b = gaussian_sample(rng, 3, 5, 0.0, 1.0);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-14));
    }

  Matrix atb(3, 5);
  const Matrix a2 = gaussian_sample(rng, 4, 3, 0.0, 1.0);
  const Matrix b2 = gaussian_sample(rng, 4, 5, 0.0, 1.0);
  matmul_at_b_acc(a2, b2, atb);
  const Matrix ref = matmul(a2.transposed(), b2);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(atb.flat()[i] == doctest::Approx(ref.flat()[i]).epsilon(1e-14));

  const Matrix abt = matmul_a_bt(a, a);
  CHECK(abt(1, 2) == doctest::Approx(dot(a.row(1), a.row(2))));
  CHECK_THROWS_AS(matmul(a, a), Error);
}

TEST_CASE("softmax_rows examples") {
  const Matrix half = softmax_rows(Matrix::from_rows({{0.0, 0.0}}));
  CHECK(half(0, 0) == 0.5);
  CHECK(half(0, 1) == 0.5);

  const Matrix big = softmax_rows(Matrix::from_rows({{1000.0, 0.0}}));
  CHECK(big.all_finite());
  CHECK(big(0, 0) == 1.0);
  CHECK(big(0, 1) >= 0.0);
  CHECK(big(0, 1) < 1e-300);

  const Matrix three = softmax_rows(Matrix::from_rows({{1.0, 2.0, 3.0}}));
  const auto oracle = softmax_oracle({1.0L, 2.0L, 3.0L});
  const double expected[3] = {0.09003, 0.24473, 0.66524};
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::abs(three(0, j) - expected[j]) < 1e-5);
    CHECK(std::abs(three(0, j) - static_cast<double>(oracle[j])) < 1e-15);
  }
}

TEST_CASE("softmax_rows properties") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix m = gaussian_sample(rng, 3, 6, 0.0, trial < 100 ? 3.0 : 400.0);
    const Matrix s = softmax_rows(m);
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (double v : s.row(r)) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    // Shift invariance.
    Matrix shifted = m;
    for (double& v : shifted.flat()) v += 123.25;
    const Matrix s2 = softmax_rows(shifted);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s.flat()[i] - s2.flat()[i]) < 1e-12);
  }
  CHECK_THROWS_WITH_AS(softmax_rows(Matrix(0, 3)), "empty input", Error);
  CHECK_THROWS_WITH_AS(softmax_rows(Matrix(2, 0)), "empty input", Error);
}

TEST_CASE("logsumexp_rows examples") {
  const auto single = logsumexp_rows(Matrix::from_rows({{-3.25}}));
  CHECK(single[0] == -3.25);
  const auto zeros = logsumexp_rows(Matrix::from_rows({{0.0, 0.0}}));
  CHECK(zeros[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const auto tiny = logsumexp_rows(Matrix::from_rows({{-1000.0, -1000.0}}));
  CHECK(std::isfinite(tiny[0]));
  CHECK(tiny[0] == doctest::Approx(-1000.0 + std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("gaussian_sample") {
  Rng a(5);
  const Matrix zero_width = gaussian_sample(a, 3, 4, 2.5, 0.0);
  for (double v : zero_width.flat()) CHECK(v == 2.5);

  Rng r1(42), r2(42);
  CHECK(gaussian_sample(r1, 7, 3, 0.0, 1.0) == gaussian_sample(r2, 7, 3, 0.0, 1.0));

  Rng big(2024);
  const Matrix s = gaussian_sample(big, 1, 100000, 0.0, 1.0);
  double mean = 0.0;
  for (double v : s.flat()) mean += v;
  mean /= static_cast<double>(s.size());
  double var = 0.0;
  for (double v : s.flat()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(s.size() - 1));
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(sd - 1.0) < 0.02);

  CHECK_THROWS_AS(gaussian_sample(a, 1, 1, 0.0, -1.0), Error);
}

TEST_CASE("rng reproducibility and streams") {
  Rng a(7, 3), b(7, 3), c(7, 4);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u32();
    CHECK(x == b.next_u32());
    differs = differs || x != c.next_u32();
  }
  CHECK(differs);

  // Reference output of PCG32 (pcg32_srandom_r(42, 54)) from the PCG paper demo.
  Rng ref(42, 54);
  const std::uint32_t expected[6] = {0xa15c02b7u, 0x7b47f409u, 0xba1d3330u, 0x83d2f293u, 0xbfa4784bu, 0xcbed606eu};
  for (std::uint32_t e : expected) CHECK(ref.next_u32() == e);

  Rng s(9);
  const Rng s1 = s.split(1);
  Rng s1b = s.split(1);
  Rng s1c = s1;
  CHECK(s1c.next_u64() == s1b.next_u64());
  Rng s2 = s.split(2);
  Rng s1d = s.split(1);
  CHECK(s1d.next_u64() != s2.next_u64());
}

TEST_CASE("uniform_int covers its range without bias") {
  Rng rng(77);
  std::vector<int> counts(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[rng.uniform_int(6)];
  double chi2 = 0.0;
  const double expected = n / 6.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 5 degrees of freedom, 99.9th percentile = 20.5.
  CHECK(chi2 < 20.5);
  CHECK_THROWS_AS(rng.uniform_int(0), Error);

  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("format_real round-trips") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, static_cast<double>(rng.uniform_int(40)) - 20.0);
    CHECK(std::stod(format_real(v)) == v);
  }
  CHECK(format_real(0.5) == "0.5");
  CHECK(format_real(1.0) == "1");
}
