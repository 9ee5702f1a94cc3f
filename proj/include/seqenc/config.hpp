#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqenc/train.hpp"

namespace seqenc {

inline constexpr int kConfigSchemaVersion = 1;

// Parameters of the synthetic classification task written by gen-data.
struct TaskConfig {
  std::size_t classes = 5;
  std::size_t dim = 8;
  double separation = 1.5;
  std::size_t components = 2;
  double center_offset = 0.0;
  std::size_t min_frames = 200;
  std::size_t max_frames = 1200;
  std::size_t train_count = 2000;
  std::size_t test_count = 500;
  std::vector<DurationBucket> test_buckets;
  std::uint64_t seed = 0;

  SyntheticTaskSpec to_spec() const;
};

// JSON run configuration:
//   { "schema_version": 1, "task": {...}, "train": {...} }
// Both sections are optional and every key inside them defaults to the struct
// defaults. Unknown keys and a wrong schema version are rejected.
struct RunConfig {
  TaskConfig task;
  TrainConfig train;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config_file(const std::string& path);
// Single-line JSON with every field resolved.
std::string to_json(const RunConfig& config);

}  // namespace seqenc
