#include "seqenc/classical.hpp"

#include <cmath>
#include <numbers>

#include "seqenc/error.hpp"

namespace seqenc {

namespace {

void check_frames(const Matrix& frames, std::size_t dim) {
  if (frames.rows() == 0) throw Error(ErrorCode::kEmptyInput, "empty utterance");
  if (frames.cols() != dim) throw Error(ErrorCode::kShapeMismatch, "frame dim does not match model dim");
}

// softmax_k of -1/2 |(x - mu_k)/sigma_k|^2, i.e. equal weights and no
// normalising constant.
Matrix scaled_distance_posteriors(const DiagonalGmm& gmm, const Matrix& frames) {
  const std::size_t k_count = gmm.components();
  Matrix logits(frames.rows(), k_count);
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    for (std::size_t k = 0; k < k_count; ++k) {
      double q = 0.0;
      for (std::size_t d = 0; d < gmm.dim(); ++d) {
        const double z = (frames(i, d) - gmm.means(k, d)) / gmm.stds(k, d);
        q += z * z;
      }
      logits(i, k) = -0.5 * q;
    }
  }
  return softmax_rows(logits);
}

}  // namespace

EncodedVector supervector(const DiagonalGmm& gmm, const Matrix& frames) {
  gmm.validate();
  check_frames(frames, gmm.dim());
  const std::size_t k_count = gmm.components();
  const std::size_t dim = gmm.dim();
  const Matrix gamma = posteriors(gmm, frames);

  EncodedVector out;
  out.layout = {EncoderKind::kSupervector, k_count, dim, NormScheme::none()};
  out.values.assign(k_count * dim, 0.0);
  for (std::size_t c = 0; c < k_count; ++c) {
    double occupancy = 0.0;
    for (std::size_t t = 0; t < frames.rows(); ++t) occupancy += gamma(t, c);
    if (occupancy < kMinOccupancy) continue;
    for (std::size_t d = 0; d < dim; ++d) {
      double first_order = 0.0;
      for (std::size_t t = 0; t < frames.rows(); ++t) first_order += gamma(t, c) * (frames(t, d) - gmm.means(c, d));
      out.values[c * dim + d] = first_order / occupancy;
    }
  }
  return out;
}

EncodedVector fisher_vector(const DiagonalGmm& gmm, const Matrix& frames, const FisherVectorOptions& opts) {
  gmm.validate();
  check_frames(frames, gmm.dim());
  const std::size_t k_count = gmm.components();
  const std::size_t dim = gmm.dim();
  const Matrix gamma = opts.posterior == FisherVectorOptions::Posterior::kGmm
                           ? posteriors(gmm, frames)
                           : scaled_distance_posteriors(gmm, frames);

  EncodedVector out;
  out.layout = {EncoderKind::kFisherVector, k_count, dim, NormScheme::none()};
  out.values.assign(2 * k_count * dim, 0.0);
  const std::size_t sigma_offset = k_count * dim;

  for (std::size_t k = 0; k < k_count; ++k) {
    const double mean_scale = opts.weight_whitening ? 1.0 / std::sqrt(gmm.weights[k]) : 1.0;
    const double sigma_scale =
        opts.weight_whitening ? 1.0 / std::sqrt(2.0 * gmm.weights[k]) : 1.0 / std::numbers::sqrt2;
    for (std::size_t i = 0; i < frames.rows(); ++i) {
      const double g = gamma(i, k);
      for (std::size_t d = 0; d < dim; ++d) {
        const double z = (frames(i, d) - gmm.means(k, d)) / gmm.stds(k, d);
        out.values[k * dim + d] += mean_scale * g * z;
        out.values[sigma_offset + k * dim + d] += sigma_scale * g * (z * z - 1.0);
      }
    }
  }
  const double inv_l = 1.0 / static_cast<double>(frames.rows());
  for (double& v : out.values) v *= inv_l;
  return out;
}

EncodedVector vlad(const Matrix& centroids, const Matrix& frames) {
  if (centroids.rows() == 0) throw Error(ErrorCode::kInvalidArgument, "empty codebook");
  check_frames(frames, centroids.cols());
  const std::size_t dim = centroids.cols();
  EncodedVector out;
  out.layout = {EncoderKind::kVlad, centroids.rows(), dim, NormScheme::none()};
  out.values.assign(centroids.rows() * dim, 0.0);
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    const std::size_t k = nearest_centroid(centroids, frames.row(i));
    for (std::size_t d = 0; d < dim; ++d) out.values[k * dim + d] += frames(i, d) - centroids(k, d);
  }
  return out;
}

EncodedVector vlad(const KmeansCodebook& codebook, const Matrix& frames) { return vlad(codebook.centroids, frames); }

}  // namespace seqenc
