#include "seqenc/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "seqenc/classical.hpp"
#include "seqenc/config.hpp"
#include "seqenc/error.hpp"
#include "seqenc/gradcheck.hpp"
#include "seqenc/io.hpp"
#include "seqenc/metrics.hpp"
#include "seqenc/train.hpp"

namespace seqenc {

namespace fs = std::filesystem;

namespace {

// Echo of every option of a subcommand after parsing, given or defaulted.
void print_options(const CLI::App& sub, std::ostream& out) {
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help") continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
    } else {
      value = opt->get_default_str();
    }
    out << "# option " << opt->get_name() << '=' << value << '\n';
  }
}

void print_metrics_table(const TrialScores& trials, std::ostream& out, std::ostream& err) {
  auto row = [&](const std::string& name, const TrialScores& t) {
    out << name << '\t' << t.trials() << '\t' << format_real(accuracy(t)) << '\t' << format_real(pooled_eer(t))
        << '\t';
    try {
      const CavgResult c = cavg_detail(t);
      for (std::size_t l : c.excluded)
        err << "warning: bucket " << name << ": class " << l << " has no trials and is excluded from C_avg\n";
      out << format_real(c.cavg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInsufficientData) throw;
      out << "na";
    }
    out << '\n';
  };
  out << "bucket\ttrials\taccuracy\teer\tcavg\n";
  const auto names = trials.bucket_names();
  for (const auto& name : names) row(name, trials.subset(name));
  if (names.size() > 1) row("pooled", trials);
}

std::vector<GradCheckTarget> gradcheck_targets(const std::string& name) {
  using T = GradCheckTarget;
  if (name == "tap") return {T::kTap};
  if (name == "netfv") return {T::kNetFv};
  if (name == "netvlad") return {T::kNetVladNone, T::kNetVladIntra};
  if (name == "frontend") return {T::kFrontEnd};
  if (name == "classifier") return {T::kClassifier};
  if (name == "xent") return {T::kSoftmaxXent};
  if (name == "pipeline") return {T::kPipelineTap, T::kPipelineNetFv, T::kPipelineNetVlad};
  return {T::kTap,         T::kNetFv,       T::kNetVladNone,   T::kNetVladIntra,  T::kFrontEnd,
          T::kClassifier,  T::kSoftmaxXent, T::kPipelineTap,   T::kPipelineNetFv, T::kPipelineNetVlad};
}

bool is_pipeline(GradCheckTarget t) {
  return t == GradCheckTarget::kPipelineTap || t == GradCheckTarget::kPipelineNetFv ||
         t == GradCheckTarget::kPipelineNetVlad;
}

Matrix pooled_frames(const std::vector<LabeledUtterance>& utts, std::size_t max_frames, Rng& rng) {
  std::size_t total = 0;
  for (const auto& u : utts) total += u.frames.rows();
  if (total == 0) throw Error(ErrorCode::kEmptyInput, "manifest lists no frames");
  const std::size_t dim = utts.front().frames.cols();
  const std::size_t n = std::min(total, max_frames);
  Matrix out(n, dim);
  if (n == total) {
    std::size_t r = 0;
    for (const auto& u : utts)
      for (std::size_t i = 0; i < u.frames.rows(); ++i, ++r) std::copy(u.frames.row(i).begin(), u.frames.row(i).end(), out.row(r).begin());
    return out;
  }
  for (std::size_t r = 0; r < n; ++r) {
    const auto& u = utts[rng.uniform_int(utts.size())];
    const auto src = u.frames.row(rng.uniform_int(u.frames.rows()));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config, out;
  std::uint64_t seed = 0;
  std::size_t classes = 0, dim = 0, train_count = 0, test_count = 0;
};

int cmd_gen_data(const CLI::App& sub, const GenDataArgs& a, std::ostream& out) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_config_file(a.config);
  if (sub.count("--seed")) cfg.task.seed = a.seed;
  if (sub.count("--classes")) cfg.task.classes = a.classes;
  if (sub.count("--dim")) cfg.task.dim = a.dim;
  if (sub.count("--train-count")) cfg.task.train_count = a.train_count;
  if (sub.count("--test-count")) cfg.task.test_count = a.test_count;
  out << "# config " << to_json(cfg) << '\n' << "# seed " << cfg.task.seed << '\n';

  const Dataset ds = generate_dataset(cfg.task.to_spec());
  const fs::path root(a.out);
  auto write_split = [&](const std::vector<LabeledUtterance>& utts, const std::string& split) {
    std::vector<ManifestEntry> entries;
    for (const auto& u : utts) {
      const std::string rel = split + "/" + u.id + ".fseq";
      write_feature_file(root / rel, u.frames);
      entries.push_back({rel, u.label, u.frames.rows(), u.bucket});
    }
    std::ostringstream ms;
    write_manifest(ms, entries);
    write_text_file(root / (split + ".csv"), ms.str());
  };
  write_split(ds.train, "train");
  write_split(ds.test, "test");
  out << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test utterances to " << a.out << '\n';
  return kExitOk;
}

struct FitGmmArgs {
  std::string manifest, out;
  std::size_t clusters = 8, max_frames = 20000, em_iters = 100;
  std::uint64_t seed = 0;
  bool kmeans_only = false;
};

int cmd_fit_gmm(const FitGmmArgs& a, std::ostream& out) {
  out << "# seed " << a.seed << '\n';
  const auto utts = load_manifest_utterances(a.manifest);
  Rng rng(a.seed, 3);
  const Matrix frames = pooled_frames(utts, a.max_frames, rng);
  const KmeansCodebook cb = kmeans_fit(frames, a.clusters, rng);
  DiagonalGmm gmm;
  if (a.kmeans_only) {
    double total = 0.0;
    for (std::size_t c : cb.counts) total += static_cast<double>(std::max<std::size_t>(c, 1));
    for (std::size_t c : cb.counts) gmm.weights.push_back(static_cast<double>(std::max<std::size_t>(c, 1)) / total);
    gmm.means = cb.centroids;
    gmm.stds = Matrix(cb.clusters(), cb.dim(), 1.0);
    out << "distortion\t" << format_real(cb.distortion_history.empty() ? 0.0 : cb.distortion_history.back()) << '\n';
  } else {
    EmOptions opts;
    opts.max_iters = a.em_iters;
    opts.sigma_floor = default_sigma_floor(frames);
    const GmmFit fit = gmm_fit_em(frames, cb, opts);
    gmm = fit.model;
    out << "log_likelihood_per_frame\t"
        << format_real(fit.log_likelihood.back() / static_cast<double>(frames.rows())) << '\n';
    out << "em_iterations\t" << fit.log_likelihood.size() - 1 << '\n';
  }
  write_gmm_file(a.out, gmm);
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

struct EncodeArgs {
  std::string encoder, manifest, out, gmm, model, norm = "none";
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
  out << "# seed -\n";
  const EncoderKind kind = encoder_kind_from_string(a.encoder);
  const auto utts = load_manifest_utterances(a.manifest);
  const NormScheme scheme = NormScheme::parse(a.norm);

  const bool net = kind == EncoderKind::kNetFv || kind == EncoderKind::kNetVlad || (kind == EncoderKind::kTap && !a.model.empty());
  Model model;
  DiagonalGmm gmm;
  if (net) {
    if (a.model.empty()) throw Error(ErrorCode::kInvalidArgument, "--model is required for " + a.encoder);
    model = read_model_file(a.model);
    if (model.encoder_kind() != kind)
      throw Error(ErrorCode::kInvalidArgument, "model holds a " + to_string(model.encoder_kind()) + " encoder");
  } else if (kind != EncoderKind::kTap) {
    if (a.gmm.empty()) throw Error(ErrorCode::kInvalidArgument, "--gmm is required for " + a.encoder);
    gmm = read_gmm_file(a.gmm);
  }

  for (const auto& u : utts) {
    EncodedVector v;
    if (net) {
      v.values = encode(model, u.frames);
      v.layout = model.encoding_layout();
    } else {
      switch (kind) {
        case EncoderKind::kSupervector: v = supervector(gmm, u.frames); break;
        case EncoderKind::kFisherVector: v = fisher_vector(gmm, u.frames); break;
        case EncoderKind::kVlad: v = vlad(gmm.means, u.frames); break;
        default: v = tap_forward(u.frames); break;
      }
      v = normalize_encoding(v, scheme);
    }
    write_encoded_file(fs::path(a.out) / (u.id + ".evec"), v);
  }
  out << "wrote " << utts.size() << " encodings to " << a.out << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string config, manifest, test_manifest, out, encoder;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, clusters = 0;
};

int cmd_train(const CLI::App& sub, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_config_file(a.config);
  if (sub.count("--seed")) cfg.train.seed = a.seed;
  if (sub.count("--encoder")) cfg.train.encoder = encoder_kind_from_string(a.encoder);
  if (sub.count("--epochs")) cfg.train.max_epochs = a.epochs;
  if (sub.count("--clusters")) cfg.train.clusters = a.clusters;
  cfg.train.validate();
  out << "# config " << to_json(cfg) << '\n'
      << "# seed " << cfg.train.seed << '\n'
      << "# norm " << cfg.train.resolved_norm().to_string() << '\n';

  const auto train = load_manifest_utterances(a.manifest);
  const fs::path dir(a.out);
  auto save_checkpoint = [&](std::size_t epoch, const Model& m) {
    write_model_file(dir / ("checkpoint-epoch" + std::to_string(epoch) + ".netp"), m);
  };
  auto write_log = [&](const TrainLog& log) {
    std::ostringstream ls;
    log.write_tsv(ls);
    write_text_file(dir / "train_log.tsv", ls.str());
  };

  TrainResult result;
  try {
    result = train_model(cfg.train, train, save_checkpoint);
  } catch (const DivergenceError& e) {
    write_log(e.partial_log());
    err << "error: " << e.what() << '\n';
    return kExitDivergence;
  }
  write_log(result.log);
  write_model_file(dir / "model.netp", result.model);
  out << "steps\t" << result.log.steps.size() << '\n';
  out << "final_smoothed_loss\t" << format_real(result.log.smoothed_tail()) << '\n';
  if (!a.test_manifest.empty()) {
    const auto test = load_manifest_utterances(a.test_manifest);
    const TrialScores scores = score_utterances(result.model, test);
    write_scores_file(dir / "scores.tsv", scores);
    print_metrics_table(scores, out, err);
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string model, manifest, scores, scores_out;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  out << "# seed -\n";
  TrialScores scores;
  if (!a.scores.empty()) {
    scores = read_scores_file(a.scores);
  } else {
    if (a.model.empty() || a.manifest.empty())
      throw Error(ErrorCode::kInvalidArgument, "evaluate needs --scores, or --model with --manifest");
    const Model model = read_model_file(a.model);
    const auto utts = load_manifest_utterances(a.manifest);
    scores = score_utterances(model, utts);
  }
  if (!a.scores_out.empty()) write_scores_file(a.scores_out, scores);
  print_metrics_table(scores, out, err);
  return kExitOk;
}

struct FuseArgs {
  std::vector<std::string> scores;
  std::vector<double> weights;
  std::string out;
};

int cmd_fuse(const FuseArgs& a, std::ostream& out, std::ostream& err) {
  out << "# seed -\n";
  std::vector<TrialScores> systems;
  for (const auto& path : a.scores) systems.push_back(read_scores_file(path));
  const TrialScores fused = fuse_scores(systems, a.weights);
  if (!a.out.empty()) write_scores_file(a.out, fused);
  print_metrics_table(fused, out, err);
  return kExitOk;
}

struct GradcheckArgs {
  std::string encoder = "all";
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  double tolerance = 0.0;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  out << "# seed " << a.seed << '\n';
  bool ok = true;
  double overall = 0.0;
  out << "target\tseeds\tcoordinates\tmax_rel_error\tmax_abs_error\ttolerance\tworst\n";
  for (GradCheckTarget t : gradcheck_targets(a.encoder)) {
    GradCheckStats stats;
    for (std::size_t s = 0; s < a.seeds; ++s) stats.merge(run_gradcheck(t, a.seed + s));
    const double tol = a.tolerance > 0.0 ? a.tolerance : (is_pipeline(t) ? 1e-5 : 1e-6);
    ok = ok && stats.max_rel_error < tol;
    overall = std::max(overall, stats.max_rel_error);
    out << to_string(t) << '\t' << a.seeds << '\t' << stats.coordinates << '\t' << format_real(stats.max_rel_error)
        << '\t' << format_real(stats.max_abs_error) << '\t' << format_real(tol) << '\t' << stats.worst << '\n';
  }
  out << "max_rel_error\t" << format_real(overall) << '\n' << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? kExitOk : kExitCheckFailed;
}

struct PlotDataArgs {
  std::string log;
  std::vector<std::string> columns = {"step", "raw_loss", "smoothed_loss", "lr", "epoch"};
  std::size_t stride = 1;
};

int cmd_plot_data(const PlotDataArgs& a, std::ostream& out) {
  std::istringstream is(read_text_file(a.log));
  const TrainLog log = TrainLog::read_tsv(is);
  for (std::size_t i = 0; i < a.columns.size(); ++i) out << (i ? "\t" : "") << a.columns[i];
  out << '\n';
  for (std::size_t s = 0; s < log.steps.size(); s += a.stride) {
    const StepRecord& r = log.steps[s];
    for (std::size_t i = 0; i < a.columns.size(); ++i) {
      const std::string& c = a.columns[i];
      out << (i ? "\t" : "");
      if (c == "step") out << r.step;
      else if (c == "raw_loss") out << format_real(r.raw_loss);
      else if (c == "smoothed_loss") out << format_real(r.smoothed_loss);
      else if (c == "lr") out << format_real(r.lr);
      else out << r.epoch;
    }
    out << '\n';
  }
  return kExitOk;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return kExitUsage;
    case ErrorCode::kDivergence: return kExitDivergence;
    default: return kExitData;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sequence encoding layers: data generation, codebooks, encoding, training and evaluation", "seqenc"};
  app.require_subcommand(1, 1);

  const std::vector<std::string> encoders = {"supervector", "fv", "vlad", "tap", "netfv", "netvlad"};

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic task as feature files plus train/test manifests");
  gen_cmd->add_option("--config", gen.config, "JSON run config (the task section is used)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Task seed (overrides the config)");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes (overrides the config)");
  gen_cmd->add_option("--dim", gen.dim, "Feature dimension (overrides the config)");
  gen_cmd->add_option("--train-count", gen.train_count, "Training utterances (overrides the config)");
  gen_cmd->add_option("--test-count", gen.test_count, "Test utterances (overrides the config)");

  FitGmmArgs fit;
  auto* fit_cmd = app.add_subcommand("fit-gmm", "Fit a diagonal GMM (or a k-means codebook) on manifest frames");
  fit_cmd->add_option("--manifest", fit.manifest, "Manifest CSV")->required();
  fit_cmd->add_option("--out", fit.out, "Output DGMM file")->required();
  fit_cmd->add_option("--clusters", fit.clusters, "Number of components")->capture_default_str();
  fit_cmd->add_option("--max-frames", fit.max_frames, "Frames sampled for fitting")->capture_default_str();
  fit_cmd->add_option("--em-iters", fit.em_iters, "Maximum EM iterations")->capture_default_str();
  fit_cmd->add_option("--seed", fit.seed, "Seed for sampling and k-means++")->capture_default_str();
  fit_cmd->add_flag("--kmeans-only", fit.kmeans_only, "Store k-means centroids with unit stds, skipping EM");

  EncodeArgs enc;
  auto* enc_cmd = app.add_subcommand("encode", "Encode every manifest utterance into an EVEC file");
  enc_cmd->add_option("--encoder", enc.encoder, "Encoder")->required()->check(CLI::IsMember(encoders));
  enc_cmd->add_option("--manifest", enc.manifest, "Manifest CSV")->required();
  enc_cmd->add_option("--out", enc.out, "Output directory")->required();
  enc_cmd->add_option("--gmm", enc.gmm, "DGMM file for supervector, fv and vlad");
  enc_cmd->add_option("--model", enc.model, "NETP model for netfv, netvlad (and tap through a front-end)");
  enc_cmd->add_option("--norm", enc.norm, "Normalisation for classical encoders")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a front-end + encoder + classifier with SGD");
  train_cmd->add_option("--config", tr.config, "JSON run config (the train section is used)");
  train_cmd->add_option("--manifest", tr.manifest, "Training manifest CSV")->required();
  train_cmd->add_option("--test-manifest", tr.test_manifest, "Optional test manifest to score after training");
  train_cmd->add_option("--out", tr.out, "Output directory for model, log and checkpoints")->required();
  train_cmd->add_option("--encoder", tr.encoder, "tap, netfv or netvlad (overrides the config)")
      ->check(CLI::IsMember({"tap", "netfv", "netvlad"}));
  train_cmd->add_option("--seed", tr.seed, "Training seed (overrides the config)");
  train_cmd->add_option("--epochs", tr.epochs, "Epoch count (overrides the config)");
  train_cmd->add_option("--clusters", tr.clusters, "Encoder clusters (overrides the config)");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Accuracy, EER and C_avg per duration bucket");
  eval_cmd->add_option("--model", ev.model, "NETP model");
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest CSV to score with --model");
  eval_cmd->add_option("--scores", ev.scores, "Existing scores TSV instead of a model");
  eval_cmd->add_option("--scores-out", ev.scores_out, "Write the scores TSV here");

  FuseArgs fu;
  auto* fuse_cmd = app.add_subcommand("fuse", "Weighted score-level fusion of several systems");
  fuse_cmd->add_option("--scores", fu.scores, "Scores TSV (repeat per system)")->required();
  fuse_cmd->add_option("--weights", fu.weights, "Comma-separated weights summing to 1 (default equal)")->delimiter(',');
  fuse_cmd->add_option("--out", fu.out, "Write the fused scores TSV here");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central finite differences");
  gc_cmd->add_option("--encoder", gc.encoder, "Suite to run")
      ->capture_default_str()
      ->check(CLI::IsMember({"all", "tap", "netfv", "netvlad", "frontend", "classifier", "xent", "pipeline"}));
  gc_cmd->add_option("--seed", gc.seed, "First seed")->capture_default_str();
  gc_cmd->add_option("--seeds", gc.seeds, "Number of consecutive seeds")->capture_default_str()->check(CLI::PositiveNumber);
  gc_cmd->add_option("--tolerance", gc.tolerance,
                     "Pass threshold on the max relative error (default 1e-6, pipelines 1e-5)");

  PlotDataArgs pd;
  auto* plot_cmd = app.add_subcommand("plot-data", "Emit training-log columns as TSV for plotting");
  plot_cmd->add_option("--log", pd.log, "train_log.tsv")->required();
  plot_cmd->add_option("--columns", pd.columns, "Columns to emit")
      ->delimiter(',')
      ->capture_default_str()
      ->check(CLI::IsMember({"step", "raw_loss", "smoothed_loss", "lr", "epoch"}));
  plot_cmd->add_option("--stride", pd.stride, "Emit every n-th step")->capture_default_str()->check(CLI::PositiveNumber);

  std::vector<const char*> argv = {"seqenc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    err << app.help();
    return kExitUsage;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    print_options(*sub, out);
    if (sub == gen_cmd) return cmd_gen_data(*gen_cmd, gen, out);
    if (sub == fit_cmd) return cmd_fit_gmm(fit, out);
    if (sub == enc_cmd) return cmd_encode(enc, out);
    if (sub == train_cmd) return cmd_train(*train_cmd, tr, out, err);
    if (sub == eval_cmd) return cmd_evaluate(ev, out, err);
    if (sub == fuse_cmd) return cmd_fuse(fu, out, err);
    if (sub == gc_cmd) return cmd_gradcheck(gc, out);
    return cmd_plot_data(pd, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace seqenc
