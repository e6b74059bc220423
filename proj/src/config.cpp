#include "dpk/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dpk/rng.hpp"
#include "json.hpp"

namespace dpk::config {

using nlohmann::json;

namespace {

const std::set<std::string> kKnownKeys = {
    "seed", "out", "teacher_checkpoint",
    "dataset.train_size", "dataset.test_size", "dataset.image_size", "dataset.classes",
    "dataset.noise",
    "model.base_channels", "model.teacher_width", "model.student_width",
    "stages",
    "mask.strategy", "mask.ratio", "mask.pi0", "mask.seed", "mask.linear_decrement",
    "transform.variant", "transform.patch_size", "transform.dim", "transform.encoder_blocks",
    "transform.decoder_blocks", "transform.heads",
    "kd.alpha", "kd.beta", "kd.tau", "kd.tau_squared", "kd.region", "kd.filler",
    "fgd.w_f", "fgd.w_b",
    "schedule.ema",
    "optimizer.lr", "optimizer.momentum", "optimizer.weight_decay", "optimizer.epochs",
    "optimizer.batch_size",
};

void validate_keys(const json& j, const std::string& prefix) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      // group must have at least one known leaf under it
      bool known_group = false;
      for (const auto& k : kKnownKeys) {
        if (k.rfind(path + ".", 0) == 0) known_group = true;
      }
      if (!known_group) throw ConfigError("unknown config key: " + path);
      validate_keys(value, path);
    } else if (!kKnownKeys.count(path)) {
      throw ConfigError("unknown config key: " + path);
    }
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

DistillConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  validate_keys(j, "");

  DistillConfig cfg;
  get_if(j, "seed", cfg.seed);
  get_if(j, "out", cfg.out);
  get_if(j, "teacher_checkpoint", cfg.teacher_checkpoint);
  get_if(j, "stages", cfg.stages);
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    get_if(d, "train_size", cfg.dataset.train_size);
    get_if(d, "test_size", cfg.dataset.test_size);
    get_if(d, "image_size", cfg.dataset.image_size);
    get_if(d, "classes", cfg.dataset.classes);
    get_if(d, "noise", cfg.dataset.noise);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    get_if(m, "base_channels", cfg.model.base_channels);
    get_if(m, "teacher_width", cfg.model.teacher_width);
    get_if(m, "student_width", cfg.model.student_width);
  }
  if (j.contains("mask")) {
    const json& m = j["mask"];
    get_if(m, "strategy", cfg.mask.strategy);
    get_if(m, "ratio", cfg.mask.ratio);
    get_if(m, "pi0", cfg.mask.pi0);
    get_if(m, "seed", cfg.mask.seed);
    get_if(m, "linear_decrement", cfg.mask.linear_decrement);
  }
  if (j.contains("transform")) {
    const json& t = j["transform"];
    std::string variant = "encoder_decoder";
    get_if(t, "variant", variant);
    cfg.transform.variant = transform::parse_variant(variant);
    get_if(t, "patch_size", cfg.transform.patch_size);
    get_if(t, "dim", cfg.transform.dim);
    get_if(t, "encoder_blocks", cfg.transform.encoder_blocks);
    get_if(t, "decoder_blocks", cfg.transform.decoder_blocks);
    get_if(t, "heads", cfg.transform.heads);
  }
  if (j.contains("kd")) {
    const json& k = j["kd"];
    get_if(k, "alpha", cfg.kd.alpha);
    get_if(k, "beta", cfg.kd.beta);
    get_if(k, "tau", cfg.kd.tau);
    get_if(k, "tau_squared", cfg.kd.tau_squared);
    get_if(k, "region", cfg.kd.region);
    get_if(k, "filler", cfg.kd.filler);
  }
  if (j.contains("fgd")) {
    get_if(j["fgd"], "w_f", cfg.fgd_w_f);
    get_if(j["fgd"], "w_b", cfg.fgd_w_b);
  }
  if (j.contains("schedule")) {
    get_if(j["schedule"], "ema", cfg.schedule_ema);
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    get_if(o, "lr", cfg.optimizer.lr);
    get_if(o, "momentum", cfg.optimizer.momentum);
    get_if(o, "weight_decay", cfg.optimizer.weight_decay);
    get_if(o, "epochs", cfg.optimizer.epochs);
    get_if(o, "batch_size", cfg.optimizer.batch_size);
  }

  // sanity limits
  if (cfg.kd.tau <= 0.0) throw ConfigError("kd.tau must be positive");
  if (cfg.kd.alpha < 0.0 || cfg.kd.beta < 0.0) throw ConfigError("kd weights must be >= 0");
  if (cfg.mask.ratio < 0.0 || cfg.mask.ratio > 1.0) throw ConfigError("mask.ratio must be in [0,1]");
  if (cfg.mask.pi0 < 0.0 || cfg.mask.pi0 > 1.0) throw ConfigError("mask.pi0 must be in [0,1]");
  transform::parse_filler(cfg.kd.filler);
  losses::parse_region(cfg.kd.region);
  for (int s : cfg.stages) {
    if (s < 1 || s > 4) throw ConfigError("stages entries must be in 1..4");
  }
  if (cfg.optimizer.batch_size < 1) throw ConfigError("optimizer.batch_size must be >= 1");
  if (cfg.optimizer.epochs < 0) throw ConfigError("optimizer.epochs must be >= 0");
  return cfg;
}

DistillConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string apply_override(const std::string& json_text, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must look like key.path=value: " + assignment);
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings allowed
  }
  json j = json::parse(json_text);
  json* node = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string part = path.substr(start, dot - start);
    if (part.empty()) throw ConfigError("bad override path: " + path);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
  return j.dump();
}

std::string to_json(const DistillConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out;
  j["teacher_checkpoint"] = cfg.teacher_checkpoint;
  j["stages"] = cfg.stages;
  j["dataset"] = {{"train_size", cfg.dataset.train_size}, {"test_size", cfg.dataset.test_size},
                  {"image_size", cfg.dataset.image_size}, {"classes", cfg.dataset.classes},
                  {"noise", cfg.dataset.noise}};
  j["model"] = {{"base_channels", cfg.model.base_channels},
                {"teacher_width", cfg.model.teacher_width},
                {"student_width", cfg.model.student_width}};
  j["mask"] = {{"strategy", cfg.mask.strategy}, {"ratio", cfg.mask.ratio}, {"pi0", cfg.mask.pi0},
               {"seed", cfg.mask.seed}, {"linear_decrement", cfg.mask.linear_decrement}};
  const char* variant = cfg.transform.variant == transform::Variant::kEncoderDecoder
                            ? "encoder_decoder"
                            : cfg.transform.variant == transform::Variant::kMlpDecoder
                                  ? "mlp_decoder"
                                  : "conv";
  j["transform"] = {{"variant", variant}, {"patch_size", cfg.transform.patch_size},
                    {"dim", cfg.transform.dim}, {"encoder_blocks", cfg.transform.encoder_blocks},
                    {"decoder_blocks", cfg.transform.decoder_blocks}, {"heads", cfg.transform.heads}};
  j["kd"] = {{"alpha", cfg.kd.alpha}, {"beta", cfg.kd.beta}, {"tau", cfg.kd.tau},
             {"tau_squared", cfg.kd.tau_squared}, {"region", cfg.kd.region},
             {"filler", cfg.kd.filler}};
  j["fgd"] = {{"w_f", cfg.fgd_w_f}, {"w_b", cfg.fgd_w_b}};
  j["schedule"] = {{"ema", cfg.schedule_ema}};
  j["optimizer"] = {{"lr", cfg.optimizer.lr}, {"momentum", cfg.optimizer.momentum},
                    {"weight_decay", cfg.optimizer.weight_decay}, {"epochs", cfg.optimizer.epochs},
                    {"batch_size", cfg.optimizer.batch_size}};
  return j.dump(2);
}

uint64_t config_hash(const DistillConfig& cfg) {
  return fnv1a64(to_json(cfg));
}

}  // namespace dpk::config
