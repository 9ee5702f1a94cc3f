#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace seqenc {

inline constexpr double kFiniteDifferenceStep = 1e-5;

// Relative error between an analytic and a numeric derivative:
//   |a - n| / max(|a|, |n|, floor)
// The floor keeps coordinates with (near-)zero true gradient from turning
// central-difference round-off into a huge ratio; above it this is the plain
// relative error.
inline constexpr double kRelativeErrorFloor = 1e-3;
double gradient_relative_error(double analytic, double numeric, double floor = kRelativeErrorFloor);

struct GradCheckStats {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // name[index] of the worst coordinate

  void merge(const GradCheckStats& other);
};

// Central differences of loss() w.r.t. each entry of values (perturbed in
// place and restored), compared against analytic.
void compare_with_finite_differences(std::span<double> values, std::span<const double> analytic,
                                     const std::function<double()>& loss, std::string_view name,
                                     GradCheckStats& stats, double h = kFiniteDifferenceStep);

enum class GradCheckTarget {
  kTap,
  kNetFv,
  kNetVladNone,
  kNetVladIntra,
  kFrontEnd,
  kClassifier,
  kSoftmaxXent,
  kPipelineTap,
  kPipelineNetFv,
  kPipelineNetVlad,
};

std::string to_string(GradCheckTarget t);

// Builds one random instance (L <= 8, D <= 5, K <= 4) from the seed and checks
// every parameter and input coordinate against central differences. Loss is a
// random linear functional of the layer output (cross-entropy for the loss and
// pipeline targets).
GradCheckStats run_gradcheck(GradCheckTarget target, std::uint64_t seed);

}  // namespace seqenc
