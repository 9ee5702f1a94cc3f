#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "seqenc/error.hpp"
#include "seqenc/gmm.hpp"
#include "seqenc/metrics.hpp"
#include "seqenc/model.hpp"
#include "seqenc/numcore.hpp"

namespace seqenc {

struct LabeledUtterance {
  std::string id;
  Matrix frames;  // T x D
  std::size_t label = 0;
  std::string bucket = "all";
};

// ---------------------------------------------------------------------------
// Synthetic task

struct DurationBucket {
  std::string name;
  std::size_t min_frames = 1;
  std::size_t max_frames = 1;
  std::size_t count = 0;
};

struct SyntheticTaskSpec {
  std::vector<DiagonalGmm> class_models;  // one frame distribution per class
  std::size_t min_frames = 200;
  std::size_t max_frames = 1200;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  // When non-empty, the test split is drawn per bucket instead of from
  // [min_frames, max_frames] with test_count utterances.
  std::vector<DurationBucket> test_buckets;
  std::uint64_t seed = 0;

  std::size_t num_classes() const noexcept { return class_models.size(); }
  std::size_t dim() const;
  void validate() const;
};

// Class c is a mixture of `components` equally weighted unit-variance
// Gaussians whose means lie on a line along a class-specific axis (axis c for
// c < dim, a random direction otherwise), adjacent means `separation` apart.
// The mixture is centred at center_offset times a random unit vector, so with
// center_offset = 0 every class has zero mean and classes differ only in how
// their mass is arranged.
SyntheticTaskSpec make_synthetic_task(std::size_t num_classes, std::size_t dim, double separation,
                                      std::size_t components, double center_offset, std::uint64_t seed);

struct Dataset {
  std::vector<LabeledUtterance> train;
  std::vector<LabeledUtterance> test;
};

// Draws one utterance of length T from the given class model.
Matrix sample_utterance(const DiagonalGmm& model, std::size_t frames, Rng& rng);

// Labels cycle through the classes; lengths are uniform in the range.
std::vector<LabeledUtterance> generate_split(const SyntheticTaskSpec& spec, std::size_t count, std::size_t min_frames,
                                             std::size_t max_frames, const std::string& prefix,
                                             const std::string& bucket, Rng& rng);

// Train and test splits on independent generator streams.
Dataset generate_dataset(const SyntheticTaskSpec& spec);

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  std::size_t length = 0;  // frames per member
  std::vector<Matrix> frames;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> sources;  // index into the utterance list
  std::vector<std::size_t> starts;   // truncation start per member
};

// One length L per batch, uniform over [min_len, min(max_len, max T - 1)].
// Members are drawn with replacement among utterances with T >= L + 1 and
// truncated to L frames starting uniformly in [0, T - L - 1].
Batch sample_batch(std::span<const LabeledUtterance> utterances, std::size_t batch_size, std::size_t min_len,
                   std::size_t max_len, Rng& rng);

// ---------------------------------------------------------------------------
// Optimiser

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct SgdState {
  std::vector<Matrix> velocity;
  std::size_t steps = 0;
};

// v <- m v + g + wd p;  p <- p - lr v. Refuses the step (throws kDivergence)
// if any gradient entry is non-finite.
void sgd_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, SgdState& state,
              const SgdConfig& cfg, double lr);

// Learning rate for a 1-based epoch: base * factor^(number of drops <= epoch).
double scheduled_learning_rate(double base, std::span<const std::size_t> drop_epochs, double factor,
                               std::size_t epoch);

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t min_truncation = 200;
  std::size_t max_truncation = 1024;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::size_t> lr_drop_epochs = {18, 24};
  double lr_drop_factor = 0.1;
  std::size_t max_epochs = 30;
  EncoderKind encoder = EncoderKind::kTap;
  std::size_t clusters = 8;
  InitMode init = InitMode::kFromGmm;
  NormScheme norm;
  bool norm_is_default = true;  // use default_norm(encoder) instead of norm
  std::vector<std::size_t> hidden = {64};
  std::size_t channels = 32;
  Activation activation = Activation::kTanh;
  std::size_t smoothing_window = 400;
  std::size_t init_sample_frames = 20000;
  std::vector<std::size_t> checkpoint_epochs;
  std::uint64_t seed = 0;

  NormScheme resolved_norm() const { return norm_is_default ? default_norm(encoder) : norm; }
  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double raw_loss = 0.0;
  double smoothed_loss = 0.0;
  double lr = 0.0;
  std::size_t epoch = 0;  // 1-based
};

struct TrainLog {
  std::size_t window = 400;
  std::vector<StepRecord> steps;
  std::vector<double> epoch_accuracy;
  std::vector<double> epoch_seconds;

  // Mean of the most recent min(window, n) raw losses.
  double smoothed_tail() const;
  // TSV: header then step, raw_loss, smoothed_loss, lr, epoch per line.
  void write_tsv(std::ostream& os) const;
  static TrainLog read_tsv(std::istream& is);
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, TrainLog partial)
      : Error(ErrorCode::kDivergence, what), log_(std::move(partial)) {}
  const TrainLog& partial_log() const noexcept { return log_; }

 private:
  TrainLog log_;
};

struct TrainResult {
  Model model;
  TrainLog log;
};

using CheckpointFn = std::function<void(std::size_t epoch, const Model&)>;

// Builds the model from config, optionally initialises the encoder from a
// sample of front-end outputs, then runs mini-batch SGD. Batch loss is the
// mean cross-entropy; member gradients are summed in member order.
TrainResult train_model(const TrainConfig& config, std::span<const LabeledUtterance> train,
                        const CheckpointFn& checkpoint = {});

// Runs the same optimisation from a caller-provided model.
TrainResult train_from(Model model, const TrainConfig& config, std::span<const LabeledUtterance> train,
                       const CheckpointFn& checkpoint = {});

// Log-softmax scores of the full (untruncated) utterances, in input order.
TrialScores score_utterances(const Model& model, std::span<const LabeledUtterance> utterances);

}  // namespace seqenc
