#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "seqenc/cli.hpp"
#include "seqenc/io.hpp"

using namespace seqenc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;

  // Output without the "# ..." provenance lines.
  std::string body() const {
    std::istringstream is(out);
    std::string line, kept;
    while (std::getline(is, line))
      if (line.rfind("#", 0) != 0) kept += line + "\n";
    return kept;
  }
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

const char* kTinyConfig = R"({
  "schema_version": 1,
  "task": {"classes": 3, "dim": 3, "components": 2, "center_offset": 0.5, "min_frames": 30, "max_frames": 60,
           "train_count": 60, "test_count": 30, "seed": 4},
  "train": {"batch_size": 8, "min_truncation": 10, "max_truncation": 29, "max_epochs": 2, "lr_drop_epochs": [2],
            "hidden": [], "channels": 3, "activation": "isru", "clusters": 2, "init_sample_frames": 300,
            "checkpoint_epochs": [1], "smoothing_window": 4, "seed": 3}
})";

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("seqenc_test_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_text_file(dir / "config.json", kTinyConfig);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

}  // namespace

TEST_CASE("gradcheck netfv seed 7 passes") {
  const Run r = run({"gradcheck", "--encoder", "netfv", "--seed", "7"});
  CHECK(r.code == 0);
  CHECK(r.out.find("max_rel_error\t") != std::string::npos);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.out.find("# seed 7") != std::string::npos);
}

TEST_CASE("gradcheck reports failure with exit code 1 under an impossible tolerance") {
  const Run r = run({"gradcheck", "--encoder", "netvlad", "--tolerance", "1e-300"});
  CHECK(r.code == kExitCheckFailed);
  CHECK(r.out.find("FAIL") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  const Run flag = run({"gradcheck", "--no-such-flag"});
  CHECK(flag.code == kExitUsage);
  CHECK(flag.err.find("Usage") != std::string::npos);
  CHECK(run({"encode", "--encoder", "lde", "--manifest", "x", "--out", "y"}).code == kExitUsage);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("missing input files exit with code 3") {
  CHECK(run({"evaluate", "--scores", "/nonexistent/scores.tsv"}).code == kExitData);
}

TEST_CASE("evaluate on oracle scores prints zero error rates") {
  Workspace ws("oracle");
  TrialScores t;
  t.scores = Matrix::from_rows({{0.0, -40.0, -40.0}, {-40.0, 0.0, -40.0}, {-40.0, -40.0, 0.0}, {0.0, -40.0, -40.0}});
  t.ids = {"a", "b", "c", "d"};
  t.labels = {0, 1, 2, 0};
  t.buckets = {"all", "all", "all", "all"};
  write_scores_file(ws.path("oracle.tsv"), t);
  const Run r = run({"evaluate", "--scores", ws.path("oracle.tsv")});
  CHECK(r.code == 0);
  CHECK(r.body() == "bucket\ttrials\taccuracy\teer\tcavg\nall\t4\t1\t0\t0\n");
}

TEST_CASE("end-to-end pipeline through the command line") {
  Workspace ws("pipeline");
  const Run gen = run({"gen-data", "--config", ws.path("config.json"), "--out", ws.path("data")});
  REQUIRE(gen.code == 0);
  CHECK(gen.out.find("# config {") != std::string::npos);
  CHECK(gen.out.find("# seed 4") != std::string::npos);
  CHECK(fs::exists(ws.path("data/train.csv")));
  CHECK(read_manifest_file(ws.path("data/test.csv")).size() == 30);

  const Run fit = run({"fit-gmm", "--manifest", ws.path("data/train.csv"), "--out", ws.path("gmm.dgmm"),
                       "--clusters", "2", "--seed", "1"});
  REQUIRE(fit.code == 0);
  CHECK(read_gmm_file(ws.path("gmm.dgmm")).components() == 2);

  for (const char* enc : {"supervector", "fv", "vlad"}) {
    const Run e = run({"encode", "--encoder", enc, "--manifest", ws.path("data/test.csv"), "--gmm",
                       ws.path("gmm.dgmm"), "--out", ws.path(std::string("enc_") + enc)});
    CHECK(e.code == 0);
  }
  const EncodedVector fv = read_encoded_file(ws.path("enc_fv/test/test-000001.evec"));
  CHECK(fv.size() == 2 * 2 * 3);

  std::vector<std::string> score_files;
  for (const char* enc : {"tap", "netfv", "netvlad"}) {
    const std::string out = ws.path(std::string("run_") + enc);
    const std::vector<std::string> args = {"train",  "--config",          ws.path("config.json"),
                                           "--manifest", ws.path("data/train.csv"), "--test-manifest",
                                           ws.path("data/test.csv"), "--out", out, "--encoder", enc};
    const Run a = run(args);
    REQUIRE(a.code == 0);
    const std::string log_a = read_text_file(out + "/train_log.tsv");
    const Run b = run(args);
    REQUIRE(b.code == 0);
    CHECK(a.out == b.out);
    CHECK(read_text_file(out + "/train_log.tsv") == log_a);
    CHECK(a.out.find("final_smoothed_loss\t") != std::string::npos);
    CHECK(fs::exists(out + "/checkpoint-epoch1.netp"));
    CHECK(fs::exists(out + "/model.netp"));
    score_files.push_back(out + "/scores.tsv");

    const Run ev = run({"evaluate", "--model", out + "/model.netp", "--manifest", ws.path("data/test.csv")});
    CHECK(ev.code == 0);
    CHECK(ev.body() == a.body().substr(a.body().find("bucket")));

    const Run enc_run = run({"encode", "--encoder", enc, "--manifest", ws.path("data/test.csv"), "--model",
                             out + "/model.netp", "--out", ws.path(std::string("netenc_") + enc)});
    CHECK(enc_run.code == 0);
  }

  const Run fused = run({"fuse", "--scores", score_files[0], "--scores", score_files[1], "--scores", score_files[2],
                         "--out", ws.path("fused.tsv")});
  CHECK(fused.code == 0);
  CHECK(read_scores_file(ws.path("fused.tsv")).trials() == 30);
  CHECK(run({"fuse", "--scores", score_files[0], "--scores", score_files[1], "--weights", "0.9,0.3"}).code ==
        kExitUsage);

  const Run plot = run({"plot-data", "--log", ws.path("run_tap/train_log.tsv"), "--columns", "step,smoothed_loss",
                        "--stride", "5"});
  CHECK(plot.code == 0);
  CHECK(plot.body().rfind("step\tsmoothed_loss\n1\t", 0) == 0);
}

TEST_CASE("config errors are reported as usage errors") {
  Workspace ws("badconfig");
  write_text_file(ws.path("bad.json"), R"({"schema_version": 2})");
  CHECK(run({"gen-data", "--config", ws.path("bad.json"), "--out", ws.path("d")}).code == kExitUsage);
  write_text_file(ws.path("unknown.json"), R"({"schema_version": 1, "task": {"colour": 1}})");
  CHECK(run({"gen-data", "--config", ws.path("unknown.json"), "--out", ws.path("d")}).code == kExitUsage);
}
