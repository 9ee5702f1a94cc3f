#include "seqenc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "seqenc/error.hpp"

namespace seqenc {

void TrialScores::validate() const {
  if (labels.size() != scores.rows() || ids.size() != scores.rows())
    throw Error(ErrorCode::kShapeMismatch, "trial ids/labels/scores disagree in length");
  if (!buckets.empty() && buckets.size() != scores.rows())
    throw Error(ErrorCode::kShapeMismatch, "bucket tags disagree in length");
  for (std::size_t l : labels)
    if (l >= scores.cols()) throw Error(ErrorCode::kInvalidArgument, "label out of range");
}

TrialScores TrialScores::subset(const std::string& bucket) const {
  TrialScores out;
  std::vector<double> data;
  for (std::size_t i = 0; i < trials(); ++i) {
    const std::string& tag = buckets.empty() ? std::string("all") : buckets[i];
    if (tag != bucket) continue;
    out.ids.push_back(ids[i]);
    out.labels.push_back(labels[i]);
    out.buckets.push_back(tag);
    data.insert(data.end(), scores.row(i).begin(), scores.row(i).end());
  }
  out.scores = Matrix(out.ids.size(), classes(), std::move(data));
  return out;
}

std::vector<std::string> TrialScores::bucket_names() const {
  std::vector<std::string> names;
  if (buckets.empty()) return {"all"};
  for (const auto& b : buckets)
    if (std::find(names.begin(), names.end(), b) == names.end()) names.push_back(b);
  return names;
}

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

double accuracy(const TrialScores& trials) {
  trials.validate();
  if (trials.trials() == 0) throw Error(ErrorCode::kEmptyInput, "no trials");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < trials.trials(); ++i)
    if (argmax_lowest(trials.scores.row(i)) == trials.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(trials.trials());
}

double eer(std::span<const double> target_scores, std::span<const double> nontarget_scores) {
  if (target_scores.empty() || nontarget_scores.empty())
    throw Error(ErrorCode::kEmptyInput, "eer needs target and non-target scores");

  // (score, is_target), ascending by score.
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(target_scores.size() + nontarget_scores.size());
  for (double s : target_scores) pooled.emplace_back(s, true);
  for (double s : nontarget_scores) pooled.emplace_back(s, false);
  std::sort(pooled.begin(), pooled.end());

  const double nt = static_cast<double>(target_scores.size());
  const double nn = static_cast<double>(nontarget_scores.size());

  // Operating points (P_fa, P_miss) for thresholds between distinct scores;
  // scores at or below the threshold are rejected.
  std::vector<std::pair<double, double>> points;
  points.emplace_back(1.0, 0.0);
  std::size_t targets_below = 0;
  std::size_t nontargets_below = 0;
  for (std::size_t i = 0; i < pooled.size();) {
    const double v = pooled[i].first;
    for (; i < pooled.size() && pooled[i].first == v; ++i) (pooled[i].second ? targets_below : nontargets_below)++;
    points.emplace_back((nn - static_cast<double>(nontargets_below)) / nn, static_cast<double>(targets_below) / nt);
  }
  std::sort(points.begin(), points.end());

  // Lower convex hull (monotone chain).
  auto cross = [](const std::pair<double, double>& o, const std::pair<double, double>& a,
                  const std::pair<double, double>& b) {
    return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
  };
  std::vector<std::pair<double, double>> hull;
  for (const auto& p : points) {
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), p) <= 0.0) hull.pop_back();
    hull.push_back(p);
  }

  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    const auto [f1, m1] = hull[i];
    const auto [f2, m2] = hull[i + 1];
    const double d1 = m1 - f1;
    const double d2 = m2 - f2;
    if (d1 >= 0.0 && d2 <= 0.0) {
      if (d1 == d2) return f1;
      const double t = d1 / (d1 - d2);
      return f1 + t * (f2 - f1);
    }
  }
  // Unreachable for a well-formed hull, which runs from P_miss - P_fa = +1 to -1.
  return hull.back().first;
}

double pooled_eer(const TrialScores& trials) {
  trials.validate();
  std::vector<double> tgt;
  std::vector<double> non;
  for (std::size_t i = 0; i < trials.trials(); ++i)
    for (std::size_t c = 0; c < trials.classes(); ++c)
      (c == trials.labels[i] ? tgt : non).push_back(trials.scores(i, c));
  return eer(tgt, non);
}

CavgResult cavg_detail(const TrialScores& trials) {
  trials.validate();
  const std::size_t n_classes = trials.classes();
  std::vector<std::size_t> count(n_classes, 0);
  // accepted[t][n]: trials of language n accepted as t.
  std::vector<std::vector<std::size_t>> accepted(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < trials.trials(); ++i) {
    const std::size_t label = trials.labels[i];
    ++count[label];
    ++accepted[argmax_lowest(trials.scores.row(i))][label];
  }

  CavgResult result;
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < n_classes; ++c) (count[c] > 0 ? present : result.excluded).push_back(c);
  if (present.size() < 2) throw Error(ErrorCode::kInsufficientData, "C_avg needs at least two languages with trials");

  const double n_lang = static_cast<double>(present.size());
  double total = 0.0;
  for (std::size_t t : present) {
    const double p_miss = 1.0 - static_cast<double>(accepted[t][t]) / static_cast<double>(count[t]);
    double fa_sum = 0.0;
    for (std::size_t n : present)
      if (n != t) fa_sum += static_cast<double>(accepted[t][n]) / static_cast<double>(count[n]);
    total += kCostMiss * kTargetPrior * p_miss + kCostFalseAlarm * (1.0 - kTargetPrior) / (n_lang - 1.0) * fa_sum;
  }
  result.cavg = total / n_lang;
  return result;
}

double cavg(const TrialScores& trials) { return cavg_detail(trials).cavg; }

TrialScores fuse_scores(std::span<const TrialScores> systems, std::span<const double> weights) {
  if (systems.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to fuse");
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(systems.size(), 1.0 / static_cast<double>(systems.size()));
  if (w.size() != systems.size()) throw Error(ErrorCode::kInvalidArgument, "one weight per system is required");
  double sum = 0.0;
  for (double v : w) sum += v;
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::kInvalidArgument, "fusion weights must sum to 1");

  const TrialScores& first = systems.front();
  first.validate();
  for (std::size_t s = 1; s < systems.size(); ++s) {
    const TrialScores& other = systems[s];
    other.validate();
    if (other.classes() != first.classes())
      throw Error(ErrorCode::kInvalidArgument, "systems disagree on the class count");
    const std::size_t n = std::min(other.trials(), first.trials());
    for (std::size_t i = 0; i < n; ++i)
      if (other.ids[i] != first.ids[i])
        throw Error(ErrorCode::kInvalidArgument, "utterance id mismatch at '" + first.ids[i] + "' vs '" +
                                                     other.ids[i] + "'");
    if (other.trials() != first.trials()) {
      const std::string id = first.trials() > n ? first.ids[n] : other.ids[n];
      throw Error(ErrorCode::kInvalidArgument, "utterance id mismatch at '" + id + "' (trial counts differ)");
    }
  }

  TrialScores fused = first;
  fused.scores.fill(0.0);
  for (std::size_t s = 0; s < systems.size(); ++s) axpy(w[s], systems[s].scores.flat(), fused.scores.flat());
  return fused;
}

}  // namespace seqenc
