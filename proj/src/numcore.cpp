#include "seqenc/numcore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "seqenc/error.hpp"

namespace seqenc {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kShapeMismatch,
                "matrix data length " + std::to_string(data_.size()) + " != " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(ErrorCode::kShapeMismatch, "ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t count) const {
  if (begin + count > rows_) throw Error(ErrorCode::kShapeMismatch, "row slice out of range");
  std::vector<double> data(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                           data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * cols_));
  return Matrix(count, cols_, std::move(data));
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::kShapeMismatch, "vstack column mismatch");
  std::vector<double> data(a.values());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Matrix(a.rows() + b.rows(), a.cols(), std::move(data));
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  const double* xp = x.data();
  double* yp = y.data();
  for (std::size_t i = 0; i < n; ++i) yp[i] += alpha * xp[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::kShapeMismatch, "matmul inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double v = a(i, k);
      if (v != 0.0) axpy(v, b.row(k), out_row);
    }
  }
  return out;
}

void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols())
    throw Error(ErrorCode::kShapeMismatch, "matmul_at_b shape mismatch");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto b_row = b.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double v = a(i, k);
      if (v != 0.0) axpy(v, b_row, out.row(k));
    }
  }
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) { return matmul(a, b.transposed()); }

void softmax_inplace(std::span<double> v) {
  if (v.empty()) throw Error(ErrorCode::kEmptyInput, "empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  const double inv = 1.0 / sum;
  for (double& x : v) x *= inv;
}

Matrix softmax_rows(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) throw Error(ErrorCode::kEmptyInput, "empty input");
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorCode::kEmptyInput, "empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  if (std::isinf(mx)) return mx;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

std::vector<double> logsumexp_rows(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) throw Error(ErrorCode::kEmptyInput, "empty input");
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = logsumexp(m.row(r));
  return out;
}

// ---------------------------------------------------------------------------
// PCG32, following the reference pcg32_srandom_r / pcg32_random_r.

namespace {
constexpr std::uint64_t kPcgMultiplier = 6364136223846793005ULL;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  state_ = 0;
  inc_ = (stream << 1u) | 1u;
  next_u32();
  state_ += seed;
  next_u32();
}

std::uint32_t Rng::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * kPcgMultiplier + inc_;
  const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const auto rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t hi = next_u32();
  return (hi << 32u) | next_u32();
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11u) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "uniform_int range is empty");
  // Rejection on the top of the 64-bit range removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::split(std::uint64_t stream_id) const {
  return Rng(seed_, splitmix64(stream_ ^ splitmix64(stream_id + 1)));
}

Matrix gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols, double mean, double std) {
  if (!(std >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "std must be non-negative");
  Matrix out(rows, cols);
  for (double& v : out.flat()) v = mean + std * rng.normal();
  return out;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace seqenc
