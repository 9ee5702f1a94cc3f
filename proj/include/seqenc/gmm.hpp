#pragma once

#include <cstddef>
#include <vector>

#include "seqenc/numcore.hpp"

namespace seqenc {

// Diagonal-covariance Gaussian mixture. stds holds per-dimension standard
// deviations, one row per component.
struct DiagonalGmm {
  std::vector<double> weights;
  Matrix means;
  Matrix stds;

  std::size_t components() const noexcept { return weights.size(); }
  std::size_t dim() const noexcept { return means.cols(); }

  // Throws unless shapes agree, weights are positive and sum to 1, and stds > 0.
  void validate() const;

  // Per-frame, per-component log(alpha_k * u_k(x)). Returns L x K.
  Matrix weighted_log_densities(const Matrix& frames) const;
  // Total log-likelihood of the frames.
  double log_likelihood(const Matrix& frames) const;
};

struct KmeansCodebook {
  Matrix centroids;                // K x D
  std::vector<std::size_t> counts;  // frames per cluster in the final assignment
  std::vector<double> distortion_history;  // one entry per Lloyd assignment step

  std::size_t clusters() const noexcept { return centroids.rows(); }
  std::size_t dim() const noexcept { return centroids.cols(); }
};

// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
std::size_t nearest_centroid(const Matrix& centroids, std::span<const double> x);

// k-means++ seeding followed by Lloyd iterations. Empty clusters are reseeded
// to the frame farthest from its current centroid.
KmeansCodebook kmeans_fit(const Matrix& frames, std::size_t k, Rng& rng, std::size_t max_iters = 100);

struct EmOptions {
  std::size_t max_iters = 100;
  double sigma_floor = 1e-3;       // absolute lower bound on every std entry
  double relative_tolerance = 1e-6;
};

struct GmmFit {
  DiagonalGmm model;
  std::vector<double> log_likelihood;  // history, first entry is the k-means init
  bool degenerate = false;             // every training frame identical
};

// sqrt(rel * mean per-dimension variance) of the frames, never below 1e-6.
double default_sigma_floor(const Matrix& frames, double rel = 1e-3);

GmmFit gmm_fit_em(const Matrix& frames, const KmeansCodebook& init, const EmOptions& opts = {});

// Frame posteriors gamma_i(k), L x K, computed in the log domain.
Matrix posteriors(const DiagonalGmm& gmm, const Matrix& frames);

}  // namespace seqenc
