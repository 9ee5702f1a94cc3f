#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "seqenc/numcore.hpp"

namespace seqenc {

// Per-utterance class scores (log-softmax outputs by convention) with truth.
struct TrialScores {
  std::vector<std::string> ids;
  Matrix scores;  // utterances x classes
  std::vector<std::size_t> labels;
  std::vector<std::string> buckets;  // optional; empty or one per utterance

  std::size_t trials() const noexcept { return scores.rows(); }
  std::size_t classes() const noexcept { return scores.cols(); }
  void validate() const;

  // Trials whose bucket tag equals `bucket`.
  TrialScores subset(const std::string& bucket) const;
  // Distinct bucket tags in first-seen order.
  std::vector<std::string> bucket_names() const;
};

// Argmax with ties broken toward the lowest class index.
std::size_t argmax_lowest(std::span<const double> v);

// Fraction of trials whose argmax score equals the label.
double accuracy(const TrialScores& trials);

// Equal error rate on the ROC convex hull: operating points are taken at every
// threshold between distinct pooled scores, the lower-left hull of the
// (P_fa, P_miss) points is formed, and the point where it crosses P_miss = P_fa
// is found by linear interpolation along the hull segment.
double eer(std::span<const double> target_scores, std::span<const double> nontarget_scores);

// Language-pooled EER: every (utterance, class) pair is a trial, target when
// the class is the utterance's label.
double pooled_eer(const TrialScores& trials);

// Average detection cost, pairwise LRE form with C_miss = C_fa = 1 and
// P_target = 0.5:
//   C_avg = 1/N sum_t [ C_miss P_tar P_miss(t)
//                       + C_fa (1 - P_tar)/(N - 1) sum_{n != t} P_fa(t, n) ]
// The detector for (utterance, language t) accepts iff s_t - max_{c != t} s_c
// > 0, or = 0 with t the lowest tied index; i.e. t is the argmax under the
// accuracy tie rule. Languages with no trials are excluded (listed in
// `excluded`) and N counts only the remaining ones.
struct CavgResult {
  double cavg = 0.0;
  std::vector<std::size_t> excluded;
};

inline constexpr double kCostMiss = 1.0;
inline constexpr double kCostFalseAlarm = 1.0;
inline constexpr double kTargetPrior = 0.5;

CavgResult cavg_detail(const TrialScores& trials);
double cavg(const TrialScores& trials);

// Weighted sum of score matrices. Systems must list the same ids in the same
// order with the same class count; weights must sum to 1. An empty weight list
// means equal weights.
TrialScores fuse_scores(std::span<const TrialScores> systems, std::span<const double> weights = {});

}  // namespace seqenc
