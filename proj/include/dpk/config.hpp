#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpk/data.hpp"
#include "dpk/errors.hpp"
#include "dpk/losses.hpp"
#include "dpk/masking.hpp"
#include "dpk/transform.hpp"

namespace dpk::config {

struct MaskConfig {
  std::string strategy = "cka";  // random|block|grid|cka|cosine|exponential|linear
  double ratio = 0.75;           // fixed-ratio strategies
  double pi0 = 1.0;
  uint64_t seed = 0;  // 0 = derive from the run seed
  double linear_decrement = 0.95;
};

struct KdConfig {
  double alpha = 0.8;
  double beta = 0.2;
  double tau = 4.0;
  bool tau_squared = true;
  std::string region = "full";  // full|non_masked
  std::string filler = "teacher";
};

struct OptimizerConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 20;
  int batch_size = 64;
};

struct ModelConfig {
  int base_channels = 8;
  double teacher_width = 1.0;
  double student_width = 0.5;
};

struct DistillConfig {
  uint64_t seed = 0;
  std::string out = "runs/out";
  std::string teacher_checkpoint;
  data::DatasetConfig dataset;
  ModelConfig model;
  std::vector<int> stages = {4};  // 1-based stage ids
  MaskConfig mask;
  transform::TransformConfig transform;
  KdConfig kd;
  OptimizerConfig optimizer;
  double fgd_w_f = 5e-5;
  double fgd_w_b = 2.5e-5;
  double schedule_ema = 0.0;
};

// Parses and schema-validates a JSON config; unknown keys are errors that
// name the offending dotted path.
DistillConfig parse_config(const std::string& json_text);
DistillConfig load_config(const std::string& path);

// Applies a `key.path=value` override onto raw JSON text.
std::string apply_override(const std::string& json_text, const std::string& assignment);

std::string to_json(const DistillConfig& cfg);
uint64_t config_hash(const DistillConfig& cfg);

}  // namespace dpk::config
