#include "seqenc/config.hpp"

#include <algorithm>

#include <json.hpp>

#include "seqenc/error.hpp"
#include "seqenc/io.hpp"

namespace seqenc {

using nlohmann::json;

SyntheticTaskSpec TaskConfig::to_spec() const {
  SyntheticTaskSpec spec = make_synthetic_task(classes, dim, separation, components, center_offset, seed);
  spec.min_frames = min_frames;
  spec.max_frames = max_frames;
  spec.train_count = train_count;
  spec.test_count = test_count;
  spec.test_buckets = test_buckets;
  spec.validate();
  return spec;
}

namespace {

// Reads known keys from an object and fails on anything left over.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string section) : obj_(obj), section_(std::move(section)) {
    if (!obj_.is_object()) throw Error(ErrorCode::kInvalidArgument, "config section '" + section_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "config key '" + section_ + "." + key + "' has the wrong type");
    }
  }

  const json* find(const char* key) {
    seen_.push_back(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
        throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + section_ + "." + key + "'");
    }
  }

 private:
  const json& obj_;
  std::string section_;
  std::vector<std::string> seen_;
};

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw Error(ErrorCode::kInvalidArgument, "config key '" + key + "' must be a string");
  return v.get<std::string>();
}

TaskConfig parse_task(const json& obj) {
  TaskConfig t;
  ObjectReader r(obj, "task");
  r.get("classes", t.classes);
  r.get("dim", t.dim);
  r.get("separation", t.separation);
  r.get("components", t.components);
  r.get("center_offset", t.center_offset);
  r.get("min_frames", t.min_frames);
  r.get("max_frames", t.max_frames);
  r.get("train_count", t.train_count);
  r.get("test_count", t.test_count);
  r.get("seed", t.seed);
  if (const json* buckets = r.find("test_buckets")) {
    if (!buckets->is_array()) throw Error(ErrorCode::kInvalidArgument, "task.test_buckets must be an array");
    for (const auto& b : *buckets) {
      DurationBucket db;
      ObjectReader br(b, "task.test_buckets[]");
      br.get("name", db.name);
      br.get("min_frames", db.min_frames);
      br.get("max_frames", db.max_frames);
      br.get("count", db.count);
      br.finish();
      if (db.name.empty()) throw Error(ErrorCode::kInvalidArgument, "every test bucket needs a name");
      t.test_buckets.push_back(db);
    }
  }
  r.finish();
  return t;
}

TrainConfig parse_train(const json& obj) {
  TrainConfig c;
  ObjectReader r(obj, "train");
  r.get("batch_size", c.batch_size);
  r.get("min_truncation", c.min_truncation);
  r.get("max_truncation", c.max_truncation);
  r.get("learning_rate", c.learning_rate);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.get("lr_drop_epochs", c.lr_drop_epochs);
  r.get("lr_drop_factor", c.lr_drop_factor);
  r.get("max_epochs", c.max_epochs);
  r.get("clusters", c.clusters);
  r.get("hidden", c.hidden);
  r.get("channels", c.channels);
  r.get("smoothing_window", c.smoothing_window);
  r.get("init_sample_frames", c.init_sample_frames);
  r.get("checkpoint_epochs", c.checkpoint_epochs);
  r.get("seed", c.seed);
  if (const json* v = r.find("encoder")) c.encoder = encoder_kind_from_string(get_string(*v, "train.encoder"));
  if (const json* v = r.find("init")) c.init = init_mode_from_string(get_string(*v, "train.init"));
  if (const json* v = r.find("activation")) c.activation = activation_from_string(get_string(*v, "train.activation"));
  if (const json* v = r.find("norm")) {
    const std::string text = get_string(*v, "train.norm");
    c.norm_is_default = text == "default";
    if (!c.norm_is_default) c.norm = NormScheme::parse(text);
  }
  r.finish();
  return c;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  ObjectReader r(root, "config");
  int version = -1;
  r.get("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw Error(ErrorCode::kInvalidArgument,
                "config schema_version must be " + std::to_string(kConfigSchemaVersion));
  if (const json* t = r.find("task")) cfg.task = parse_task(*t);
  if (const json* t = r.find("train")) cfg.train = parse_train(*t);
  r.finish();
  cfg.train.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path) { return parse_config(read_text_file(path)); }

std::string to_json(const RunConfig& config) {
  const TaskConfig& t = config.task;
  const TrainConfig& c = config.train;
  json buckets = json::array();
  for (const auto& b : t.test_buckets)
    buckets.push_back({{"name", b.name}, {"min_frames", b.min_frames}, {"max_frames", b.max_frames}, {"count", b.count}});
  json root = {
      {"schema_version", kConfigSchemaVersion},
      {"task",
       {{"classes", t.classes},
        {"dim", t.dim},
        {"separation", t.separation},
        {"components", t.components},
        {"center_offset", t.center_offset},
        {"min_frames", t.min_frames},
        {"max_frames", t.max_frames},
        {"train_count", t.train_count},
        {"test_count", t.test_count},
        {"test_buckets", buckets},
        {"seed", t.seed}}},
      {"train",
       {{"batch_size", c.batch_size},
        {"min_truncation", c.min_truncation},
        {"max_truncation", c.max_truncation},
        {"learning_rate", c.learning_rate},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay},
        {"lr_drop_epochs", c.lr_drop_epochs},
        {"lr_drop_factor", c.lr_drop_factor},
        {"max_epochs", c.max_epochs},
        {"encoder", to_string(c.encoder)},
        {"clusters", c.clusters},
        {"init", to_string(c.init)},
        {"norm", c.norm_is_default ? std::string("default") : c.norm.to_string()},
        {"hidden", c.hidden},
        {"channels", c.channels},
        {"activation", to_string(c.activation)},
        {"smoothing_window", c.smoothing_window},
        {"init_sample_frames", c.init_sample_frames},
        {"checkpoint_epochs", c.checkpoint_epochs},
        {"seed", c.seed}}},
  };
  return root.dump();
}

}  // namespace seqenc
