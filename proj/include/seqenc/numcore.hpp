#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace seqenc {

// Dense row-major matrix of doubles. Sequences are stored frames-as-rows
// (L x D), so row(i) is the i-th frame.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const noexcept;

  // Rows [begin, begin + count) as a new matrix.
  Matrix slice_rows(std::size_t begin, std::size_t count) const;
  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Stacks a on top of b (column counts must match).
Matrix vstack(const Matrix& a, const Matrix& b);

// out = a * b.
Matrix matmul(const Matrix& a, const Matrix& b);
// out += a^T * b, where a is m x p and b is m x n; out is p x n.
void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& out);
// out = a * b^T.
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Row-wise softmax with max subtraction. Throws on a zero dimension.
Matrix softmax_rows(const Matrix& m);
// In-place softmax of a single row.
void softmax_inplace(std::span<double> v);
std::vector<double> logsumexp_rows(const Matrix& m);
double logsumexp(std::span<const double> v);

// PCG32 (permuted congruential generator, XSH-RR output over a 64-bit LCG
// state). The output stream for a given (seed, stream) pair is fixed
// by the algorithm and identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n), unbiased. n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  // Independent generator sharing this seed on a derived stream.
  Rng split(std::uint64_t stream_id) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols, double mean, double std);

// Shortest decimal text that round-trips to the same double.
std::string format_real(double v);

}  // namespace seqenc
