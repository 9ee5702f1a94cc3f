#pragma once

#include "seqenc/encoding.hpp"
#include "seqenc/gmm.hpp"
#include "seqenc/numcore.hpp"

namespace seqenc {

// Components whose total occupancy falls below this emit a zero block.
inline constexpr double kMinOccupancy = 1e-10;

// Occupancy-normalised first-order statistics per component, concatenated in
// component order: block c = sum_t g_t(c) (x_t - mu_c) / sum_t g_t(c).
EncodedVector supervector(const DiagonalGmm& gmm, const Matrix& frames);

struct FisherVectorOptions {
  enum class Posterior {
    kGmm,                // full mixture posterior with the GMM weights and normalisers
    kEqualWeightScaled,  // softmax_k of -1/2 |(x - mu_k) / sigma_k|^2
  };
  Posterior posterior = Posterior::kGmm;
  // Multiply the mean block by 1/sqrt(a_k) and the sigma block by 1/sqrt(2 a_k).
  // When false the sigma block keeps a bare 1/sqrt(2).
  bool weight_whitening = true;
};

// Mean-pooled Fisher vector w.r.t. means and standard deviations. Layout: all
// K mean blocks, then all K sigma blocks, each block D long.
EncodedVector fisher_vector(const DiagonalGmm& gmm, const Matrix& frames, const FisherVectorOptions& opts = {});

// Hard-assignment VLAD: block k sums residuals x - mu_k of frames whose nearest
// centroid is k (ties to the lowest index).
EncodedVector vlad(const KmeansCodebook& codebook, const Matrix& frames);
EncodedVector vlad(const Matrix& centroids, const Matrix& frames);

}  // namespace seqenc
