#include "seqenc/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace seqenc {

// ---------------------------------------------------------------------------
// Synthetic task

std::size_t SyntheticTaskSpec::dim() const { return class_models.empty() ? 0 : class_models.front().dim(); }

void SyntheticTaskSpec::validate() const {
  if (class_models.size() < 2) throw Error(ErrorCode::kInvalidArgument, "task needs at least two classes");
  for (const auto& m : class_models) {
    m.validate();
    if (m.dim() != dim()) throw Error(ErrorCode::kInvalidArgument, "class models must share the feature dim");
  }
  if (min_frames < 1 || max_frames < min_frames)
    throw Error(ErrorCode::kInvalidArgument, "utterance length range is invalid");
  for (const auto& b : test_buckets)
    if (b.min_frames < 1 || b.max_frames < b.min_frames)
      throw Error(ErrorCode::kInvalidArgument, "bucket '" + b.name + "' has an invalid length range");
}

SyntheticTaskSpec make_synthetic_task(std::size_t num_classes, std::size_t dim, double separation,
                                      std::size_t components, double center_offset, std::uint64_t seed) {
  if (num_classes < 2 || dim == 0 || components == 0)
    throw Error(ErrorCode::kInvalidArgument, "task needs >= 2 classes, dim >= 1 and >= 1 component");
  Rng rng(seed, 11);
  auto random_unit = [&] {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    const double n = norm2(v);
    for (double& x : v) x /= n;
    return v;
  };
  SyntheticTaskSpec spec;
  spec.seed = seed;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<double> axis(dim, 0.0);
    if (c < dim) {
      axis[c] = 1.0;
    } else {
      axis = random_unit();
    }
    const std::vector<double> center_dir = random_unit();

    DiagonalGmm g;
    g.weights.assign(components, 1.0 / static_cast<double>(components));
    g.means = Matrix(components, dim);
    g.stds = Matrix(components, dim, 1.0);
    for (std::size_t j = 0; j < components; ++j) {
      const double t = separation * (static_cast<double>(j) - 0.5 * static_cast<double>(components - 1));
      for (std::size_t d = 0; d < dim; ++d) g.means(j, d) = center_offset * center_dir[d] + t * axis[d];
    }
    spec.class_models.push_back(std::move(g));
  }
  return spec;
}

Matrix sample_utterance(const DiagonalGmm& model, std::size_t frames, Rng& rng) {
  const std::size_t dim = model.dim();
  Matrix out(frames, dim);
  for (std::size_t i = 0; i < frames; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double acc = model.weights[0];
    while (u >= acc && k + 1 < model.components()) acc += model.weights[++k];
    auto row = out.row(i);
    for (std::size_t d = 0; d < dim; ++d) row[d] = model.means(k, d) + model.stds(k, d) * rng.normal();
  }
  return out;
}

std::vector<LabeledUtterance> generate_split(const SyntheticTaskSpec& spec, std::size_t count, std::size_t min_frames,
                                             std::size_t max_frames, const std::string& prefix,
                                             const std::string& bucket, Rng& rng) {
  std::vector<LabeledUtterance> out;
  out.reserve(count);
  char id[32];
  for (std::size_t i = 0; i < count; ++i) {
    LabeledUtterance u;
    std::snprintf(id, sizeof(id), "%06zu", i);
    u.id = prefix + id;
    u.label = i % spec.num_classes();
    u.bucket = bucket;
    const std::size_t t = min_frames + rng.uniform_int(max_frames - min_frames + 1);
    u.frames = sample_utterance(spec.class_models[u.label], t, rng);
    out.push_back(std::move(u));
  }
  return out;
}

Dataset generate_dataset(const SyntheticTaskSpec& spec) {
  spec.validate();
  const Rng base(spec.seed);
  Dataset ds;
  Rng train_rng = base.split(1);
  ds.train = generate_split(spec, spec.train_count, spec.min_frames, spec.max_frames, "train-", "all", train_rng);
  if (spec.test_buckets.empty()) {
    Rng test_rng = base.split(2);
    ds.test = generate_split(spec, spec.test_count, spec.min_frames, spec.max_frames, "test-", "all", test_rng);
  } else {
    for (std::size_t b = 0; b < spec.test_buckets.size(); ++b) {
      const auto& bucket = spec.test_buckets[b];
      Rng rng = base.split(100 + b);
      auto part = generate_split(spec, bucket.count, bucket.min_frames, bucket.max_frames,
                                 "test-" + bucket.name + "-", bucket.name, rng);
      std::move(part.begin(), part.end(), std::back_inserter(ds.test));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Batching

Batch sample_batch(std::span<const LabeledUtterance> utterances, std::size_t batch_size, std::size_t min_len,
                   std::size_t max_len, Rng& rng) {
  if (batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch size must be positive");
  if (min_len == 0 || max_len < min_len) throw Error(ErrorCode::kInvalidArgument, "invalid truncation range");
  std::size_t longest = 0;
  for (const auto& u : utterances) longest = std::max(longest, u.frames.rows());
  if (longest < min_len + 1) throw Error(ErrorCode::kInsufficientData, "utterance too short");

  const std::size_t hi = std::min(max_len, longest - 1);
  Batch batch;
  batch.length = min_len + rng.uniform_int(hi - min_len + 1);

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (utterances[i].frames.rows() >= batch.length + 1) eligible.push_back(i);

  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t src = eligible[rng.uniform_int(eligible.size())];
    const auto& u = utterances[src];
    const std::size_t start = rng.uniform_int(u.frames.rows() - batch.length);
    batch.frames.push_back(u.frames.slice_rows(start, batch.length));
    batch.labels.push_back(u.label);
    batch.sources.push_back(src);
    batch.starts.push_back(start);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Optimiser

void sgd_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, SgdState& state,
              const SgdConfig& cfg, double lr) {
  if (params.size() != grads.size()) throw Error(ErrorCode::kShapeMismatch, "parameter/gradient count mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t]->rows() != grads[t]->rows() || params[t]->cols() != grads[t]->cols())
      throw Error(ErrorCode::kShapeMismatch, "parameter/gradient shape mismatch");
    if (!grads[t]->all_finite()) throw Error(ErrorCode::kDivergence, "divergence");
  }
  if (state.velocity.empty()) {
    for (const Matrix* p : params) state.velocity.emplace_back(p->rows(), p->cols());
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto v = state.velocity[t].flat();
    auto p = params[t]->flat();
    const auto g = grads[t]->flat();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = cfg.momentum * v[j] + g[j] + cfg.weight_decay * p[j];
      p[j] -= lr * v[j];
    }
  }
  ++state.steps;
}

double scheduled_learning_rate(double base, std::span<const std::size_t> drop_epochs, double factor,
                               std::size_t epoch) {
  double lr = base;
  for (std::size_t e : drop_epochs)
    if (epoch >= e) lr *= factor;
  return lr;
}

// ---------------------------------------------------------------------------
// Log

double TrainLog::smoothed_tail() const {
  if (steps.empty()) return 0.0;
  const std::size_t n = std::min(window, steps.size());
  double s = 0.0;
  for (std::size_t i = steps.size() - n; i < steps.size(); ++i) s += steps[i].raw_loss;
  return s / static_cast<double>(n);
}

void TrainLog::write_tsv(std::ostream& os) const {
  os << "step\traw_loss\tsmoothed_loss\tlr\tepoch\n";
  for (const auto& r : steps)
    os << r.step << '\t' << format_real(r.raw_loss) << '\t' << format_real(r.smoothed_loss) << '\t'
       << format_real(r.lr) << '\t' << r.epoch << '\n';
}

TrainLog TrainLog::read_tsv(std::istream& is) {
  TrainLog log;
  std::string line;
  if (!std::getline(is, line) || line.rfind("step\t", 0) != 0)
    throw Error(ErrorCode::kFormat, "train log is missing its header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    StepRecord r;
    if (!(ls >> r.step >> r.raw_loss >> r.smoothed_loss >> r.lr >> r.epoch))
      throw Error(ErrorCode::kFormat, "malformed train log line: " + line);
    log.steps.push_back(r);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Training loop

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch_size must be positive");
  if (min_truncation == 0 || max_truncation < min_truncation)
    throw Error(ErrorCode::kInvalidArgument, "truncation range must satisfy 1 <= lo <= hi");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::kInvalidArgument, "momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "weight_decay must be non-negative");
  if (!(lr_drop_factor > 0.0)) throw Error(ErrorCode::kInvalidArgument, "lr_drop_factor must be positive");
  if (max_epochs == 0) throw Error(ErrorCode::kInvalidArgument, "max_epochs must be positive");
  if (smoothing_window == 0) throw Error(ErrorCode::kInvalidArgument, "smoothing_window must be positive");
  if (encoder != EncoderKind::kTap && encoder != EncoderKind::kNetFv && encoder != EncoderKind::kNetVlad)
    throw Error(ErrorCode::kInvalidArgument, "encoder must be tap, netfv or netvlad");
  if (clusters == 0) throw Error(ErrorCode::kInvalidArgument, "clusters must be positive");
}

namespace {

Matrix sample_training_frames(std::span<const LabeledUtterance> train, std::size_t count, Rng& rng) {
  const std::size_t dim = train.front().frames.cols();
  Matrix out(count, dim);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& u = train[rng.uniform_int(train.size())];
    const auto row = u.frames.row(rng.uniform_int(u.frames.rows()));
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TrainResult train_model(const TrainConfig& config, std::span<const LabeledUtterance> train,
                        const CheckpointFn& checkpoint) {
  config.validate();
  if (train.empty()) throw Error(ErrorCode::kInsufficientData, "training set is empty");
  std::size_t classes = 0;
  for (const auto& u : train) classes = std::max(classes, u.label + 1);

  ModelSpec spec;
  spec.input_dim = train.front().frames.cols();
  spec.hidden = config.hidden;
  spec.channels = config.channels;
  spec.activation = config.activation;
  spec.encoder = config.encoder;
  spec.clusters = config.clusters;
  spec.norm = config.resolved_norm();
  spec.classes = std::max<std::size_t>(classes, 2);

  Rng init_rng(config.seed, 1);
  Model model = init_model(spec, init_rng);
  if (config.init == InitMode::kFromGmm && config.encoder != EncoderKind::kTap) {
    const Matrix sample = sample_training_frames(train, config.init_sample_frames, init_rng);
    init_encoder_from_data(model, sample, init_rng);
  }
  return train_from(std::move(model), config, train, checkpoint);
}

TrainResult train_from(Model model, const TrainConfig& config, std::span<const LabeledUtterance> train,
                       const CheckpointFn& checkpoint) {
  config.validate();
  model.validate();
  Rng batch_rng(config.seed, 2);
  const SgdConfig sgd{config.momentum, config.weight_decay};
  SgdState state;
  TrainLog log;
  log.window = config.smoothing_window;
  const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);

  Model grads = model.zeros_like();
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = scheduled_learning_rate(config.learning_rate, config.lr_drop_epochs, config.lr_drop_factor, epoch);
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const Batch batch =
          sample_batch(train, config.batch_size, config.min_truncation, config.max_truncation, batch_rng);
      for (Matrix* g : grads.tensors()) g->fill(0.0);
      double loss_sum = 0.0;
      std::vector<double> scores;
      for (std::size_t b = 0; b < batch.frames.size(); ++b) {
        loss_sum += accumulate_gradients(model, batch.frames[b], batch.labels[b], inv_batch, grads, &scores);
        if (argmax(scores) == batch.labels[b]) ++correct;
        ++seen;
      }
      const double loss = loss_sum * inv_batch;
      if (!std::isfinite(loss)) throw DivergenceError("divergence: non-finite loss at epoch " + std::to_string(epoch), log);
      try {
        auto params = model.tensors();
        const auto gs = grads.tensors();
        std::vector<const Matrix*> cgs(gs.begin(), gs.end());
        sgd_step(params, cgs, state, sgd, lr);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kDivergence) throw DivergenceError(e.what(), log);
        throw;
      }

      StepRecord r;
      r.step = log.steps.size() + 1;
      r.raw_loss = loss;
      r.lr = lr;
      r.epoch = epoch;
      log.steps.push_back(r);
      log.steps.back().smoothed_loss = log.smoothed_tail();
    }
    log.epoch_accuracy.push_back(seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0);
    log.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (checkpoint && std::find(config.checkpoint_epochs.begin(), config.checkpoint_epochs.end(), epoch) !=
                          config.checkpoint_epochs.end())
      checkpoint(epoch, model);
  }
  return {std::move(model), std::move(log)};
}

TrialScores score_utterances(const Model& model, std::span<const LabeledUtterance> utterances) {
  TrialScores out;
  out.scores = Matrix(utterances.size(), model.classifier.classes());
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    const auto logp = log_softmax(forward_scores(model, u.frames));
    std::copy(logp.begin(), logp.end(), out.scores.row(i).begin());
    out.ids.push_back(u.id);
    out.labels.push_back(u.label);
    out.buckets.push_back(u.bucket);
  }
  return out;
}

}  // namespace seqenc
