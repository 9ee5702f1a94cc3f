#include "seqenc/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "seqenc/error.hpp"

namespace seqenc {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

// Returns the total distortion and writes the assignment.
double assign_all(const Matrix& frames, const Matrix& centroids, std::vector<std::size_t>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    const std::size_t k = nearest_centroid(centroids, frames.row(i));
    assignment[i] = k;
    total += squared_distance(frames.row(i), centroids.row(k));
  }
  return total;
}

Matrix kmeanspp_seed(const Matrix& frames, std::size_t k, Rng& rng) {
  const std::size_t n = frames.rows();
  Matrix centroids(k, frames.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t chosen = rng.uniform_int(n);
  for (std::size_t j = 0; j < k; ++j) {
    if (j > 0) {
      double total = 0.0;
      for (double v : d2) total += v;
      if (total <= 0.0) {
        chosen = rng.uniform_int(n);
      } else {
        const double r = rng.uniform() * total;
        double acc = 0.0;
        chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc > r && d2[i] > 0.0) {
            chosen = i;
            break;
          }
        }
        // Guard against landing on a zero-weight tail after rounding.
        while (d2[chosen] <= 0.0 && chosen > 0) --chosen;
      }
    }
    std::copy(frames.row(chosen).begin(), frames.row(chosen).end(), centroids.row(j).begin());
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(frames.row(i), centroids.row(j)));
  }
  return centroids;
}

}  // namespace

void DiagonalGmm::validate() const {
  const std::size_t k = weights.size();
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "gmm has no components");
  if (means.rows() != k || stds.rows() != k || stds.cols() != means.cols() || means.cols() == 0)
    throw Error(ErrorCode::kShapeMismatch, "gmm parameter shapes disagree");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw Error(ErrorCode::kInvalidArgument, "gmm weight must be positive");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-10) throw Error(ErrorCode::kInvalidArgument, "gmm weights must sum to 1");
  for (double s : stds.flat())
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::kInvalidArgument, "gmm std must be positive");
  if (!means.all_finite()) throw Error(ErrorCode::kInvalidArgument, "gmm means must be finite");
}

Matrix DiagonalGmm::weighted_log_densities(const Matrix& frames) const {
  if (frames.cols() != dim())
    throw Error(ErrorCode::kShapeMismatch,
                "frame dim " + std::to_string(frames.cols()) + " != gmm dim " + std::to_string(dim()));
  const std::size_t k_count = components();
  const std::size_t d_count = dim();
  const double log_2pi = std::log(2.0 * std::numbers::pi);

  // Per-component constant: log alpha - sum log sigma - D/2 log 2pi.
  std::vector<double> constant(k_count);
  Matrix inv_std(k_count, d_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    double log_det = 0.0;
    for (std::size_t d = 0; d < d_count; ++d) {
      log_det += std::log(stds(k, d));
      inv_std(k, d) = 1.0 / stds(k, d);
    }
    constant[k] = std::log(weights[k]) - log_det - 0.5 * static_cast<double>(d_count) * log_2pi;
  }

  Matrix out(frames.rows(), k_count);
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    const auto x = frames.row(i);
    for (std::size_t k = 0; k < k_count; ++k) {
      double q = 0.0;
      for (std::size_t d = 0; d < d_count; ++d) {
        const double z = (x[d] - means(k, d)) * inv_std(k, d);
        q += z * z;
      }
      out(i, k) = constant[k] - 0.5 * q;
    }
  }
  return out;
}

double DiagonalGmm::log_likelihood(const Matrix& frames) const {
  const Matrix logp = weighted_log_densities(frames);
  double total = 0.0;
  for (double v : logsumexp_rows(logp)) total += v;
  return total;
}

std::size_t nearest_centroid(const Matrix& centroids, std::span<const double> x) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    const double d = squared_distance(x, centroids.row(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

KmeansCodebook kmeans_fit(const Matrix& frames, std::size_t k, Rng& rng, std::size_t max_iters) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
  if (frames.rows() < k) throw Error(ErrorCode::kInsufficientData, "insufficient data");
  if (frames.cols() == 0) throw Error(ErrorCode::kEmptyInput, "empty input");

  const std::size_t n = frames.rows();
  const std::size_t dim = frames.cols();
  KmeansCodebook cb;
  cb.centroids = kmeanspp_seed(frames, k, rng);

  std::vector<std::size_t> assignment(n);
  cb.distortion_history.push_back(assign_all(frames, cb.centroids, assignment));

  for (std::size_t it = 0; it < max_iters; ++it) {
    // Update step.
    Matrix sums(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      axpy(1.0, frames.row(i), sums.row(assignment[i]));
      ++counts[assignment[i]];
    }
    std::vector<bool> used(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (std::size_t d = 0; d < dim; ++d) cb.centroids(c, d) = sums(c, d) * inv;
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      // Empty cluster: move it onto the worst-fit frame.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (used[i]) continue;
        const double d = squared_distance(frames.row(i), cb.centroids.row(assignment[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      used[far] = true;
      std::copy(frames.row(far).begin(), frames.row(far).end(), cb.centroids.row(c).begin());
    }

    std::vector<std::size_t> next(n);
    cb.distortion_history.push_back(assign_all(frames, cb.centroids, next));
    const bool changed = next != assignment;
    assignment = std::move(next);
    if (!changed) break;
  }

  cb.counts.assign(k, 0);
  for (std::size_t a : assignment) ++cb.counts[a];
  return cb;
}

double default_sigma_floor(const Matrix& frames, double rel) {
  if (frames.rows() == 0 || frames.cols() == 0) return 1e-6;
  const double n = static_cast<double>(frames.rows());
  double mean_var = 0.0;
  for (std::size_t d = 0; d < frames.cols(); ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < frames.rows(); ++i) mean += frames(i, d);
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < frames.rows(); ++i) var += (frames(i, d) - mean) * (frames(i, d) - mean);
    mean_var += var / n;
  }
  mean_var /= static_cast<double>(frames.cols());
  return std::max(std::sqrt(rel * mean_var), 1e-6);
}

namespace {

// Weighted moments for one component: sets weights[k], means row k, stds row k.
void m_step_component(const Matrix& frames, std::span<const double> resp, std::size_t k, double floor,
                      DiagonalGmm& g) {
  const std::size_t dim = frames.cols();
  double nk = 0.0;
  for (double r : resp) nk += r;
  const double n = static_cast<double>(frames.rows());
  if (nk < 1e-10) {
    // Starved component: keep its location, give it a vanishing weight.
    g.weights[k] = 1e-10 / n;
    return;
  }
  g.weights[k] = nk / n;
  for (std::size_t d = 0; d < dim; ++d) {
    double s = 0.0;
    for (std::size_t i = 0; i < frames.rows(); ++i) s += resp[i] * frames(i, d);
    g.means(k, d) = s / nk;
  }
  for (std::size_t d = 0; d < dim; ++d) {
    double s = 0.0;
    for (std::size_t i = 0; i < frames.rows(); ++i) {
      const double t = frames(i, d) - g.means(k, d);
      s += resp[i] * t * t;
    }
    g.stds(k, d) = std::max(std::sqrt(s / nk), floor);
  }
}

void renormalize(std::vector<double>& w) {
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
}

}  // namespace

GmmFit gmm_fit_em(const Matrix& frames, const KmeansCodebook& init, const EmOptions& opts) {
  if (!(opts.sigma_floor > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma floor must be positive");
  if (frames.rows() == 0) throw Error(ErrorCode::kEmptyInput, "empty input");
  if (frames.cols() != init.dim()) throw Error(ErrorCode::kShapeMismatch, "codebook dim mismatch");
  const std::size_t k_count = init.clusters();
  const std::size_t n = frames.rows();
  const std::size_t dim = frames.cols();

  GmmFit fit;
  fit.degenerate = true;
  for (std::size_t i = 1; i < n && fit.degenerate; ++i)
    for (std::size_t d = 0; d < dim; ++d)
      if (frames(i, d) != frames(0, d)) {
        fit.degenerate = false;
        break;
      }

  // Initialise from the hard k-means partition.
  DiagonalGmm& g = fit.model;
  g.weights.assign(k_count, 0.0);
  g.means = init.centroids;
  g.stds = Matrix(k_count, dim, opts.sigma_floor);
  {
    Matrix hard(k_count, n);
    for (std::size_t i = 0; i < n; ++i) hard(nearest_centroid(init.centroids, frames.row(i)), i) = 1.0;
    // Empty partitions keep their centroid with a vanishing weight.
    for (std::size_t k = 0; k < k_count; ++k) m_step_component(frames, hard.row(k), k, opts.sigma_floor, g);
    renormalize(g.weights);
  }

  Matrix resp_t(k_count, n);  // responsibilities, component-major
  double prev = 0.0;
  for (std::size_t it = 0;; ++it) {
    const Matrix logp = g.weighted_log_densities(frames);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double lse = logsumexp(logp.row(i));
      ll += lse;
      for (std::size_t k = 0; k < k_count; ++k) resp_t(k, i) = std::exp(logp(i, k) - lse);
    }
    fit.log_likelihood.push_back(ll);
    if (it > 0) {
      const double rel = (ll - prev) / std::max(std::abs(prev), 1e-300);
      if (rel < opts.relative_tolerance) break;
    }
    if (it == opts.max_iters) break;
    prev = ll;
    for (std::size_t k = 0; k < k_count; ++k) m_step_component(frames, resp_t.row(k), k, opts.sigma_floor, g);
    renormalize(g.weights);
  }
  return fit;
}

Matrix posteriors(const DiagonalGmm& gmm, const Matrix& frames) {
  Matrix logp = gmm.weighted_log_densities(frames);
  for (std::size_t i = 0; i < logp.rows(); ++i) {
    auto row = logp.row(i);
    const double lse = logsumexp(row);
    for (double& v : row) v = std::exp(v - lse);
  }
  return logp;
}

}  // namespace seqenc
