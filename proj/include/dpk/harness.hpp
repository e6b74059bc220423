#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpk/config.hpp"
#include "dpk/data.hpp"
#include "dpk/model.hpp"
#include "dpk/similarity.hpp"
#include "dpk/transform.hpp"

namespace dpk::harness {

struct EvalReport {
  double top1 = 0.0;  // percent
  double top5 = 0.0;
  int n_examples = 0;
  double cls_loss = 0.0;
  double logits_loss = 0.0;
  double feat_loss = 0.0;
};

struct StepMetrics {
  double cls = 0.0;
  double logits = 0.0;
  double feat = 0.0;
  double ratio = 0.0;
  double cka = 0.0;
  double cosine = 0.0;
};

// Top-1 / top-5 with ties broken toward the smallest class index; top-5
// uses min(5, classes).
EvalReport evaluate(model::ToyConvNet& m, const data::DatasetSplit& d, int batch_size = 256);

// Versioned binary checkpoint: parameter name -> shape -> f32 payload,
// headed by a config hash and seed.
void save_checkpoint(const std::string& path, const nn::ParamRefs& params, uint64_t config_hash,
                     uint64_t seed);
void load_checkpoint(const std::string& path, const nn::ParamRefs& params);

// Deterministic minibatch index order for one epoch; a trailing batch
// smaller than 4 merges into the previous one.
std::vector<std::vector<int>> epoch_batches(int n, int batch_size, uint64_t seed, int epoch);

struct RunResult {
  EvalReport report;
  SimilarityTrace trace;
};

// Owns the teacher/student pair, the per-stage transformation modules,
// schedules and optimizer state for one distillation run.
class Distiller {
 public:
  Distiller(const config::DistillConfig& cfg, const data::Dataset* dataset = nullptr);

  void load_teacher(const std::string& path);
  // Copies an already trained teacher's parameters.
  void adopt_teacher(model::ToyConvNet& trained);

  StepMetrics distill_step(const data::DatasetSplit& batch, int64_t step_index, int epoch);
  RunResult run();  // full loop; writes nothing

  model::ToyConvNet& student() { return *student_; }
  model::ToyConvNet& teacher() { return *teacher_; }
  SimilarityTrace& trace() { return trace_; }
  const config::DistillConfig& cfg() const { return cfg_; }
  uint64_t teacher_checksum() const;
  int steps_per_epoch() const;

 private:
  config::DistillConfig cfg_;
  std::optional<data::Dataset> owned_dataset_;
  const data::Dataset* dataset_ = nullptr;
  std::unique_ptr<model::ToyConvNet> teacher_;
  std::unique_ptr<model::ToyConvNet> student_;
  std::vector<int> stage_ids_;  // 0-based
  std::vector<std::unique_ptr<transform::StageTransform>> transforms_;
  std::vector<ScheduleState> schedules_;
  std::unique_ptr<nn::SgdOptimizer> optimizer_;
  SimilarityTrace trace_;
  uint64_t mask_seed_ = 0;
  double ema_value_ = -1.0;

  std::vector<MaskPattern> draw_masks(int stage_slot, int batch, int64_t step_index, double ratio);
};

// Supervised training with the classification loss only. `width` selects
// the model (teacher or scratch-student baselines).
RunResult run_baseline(const config::DistillConfig& cfg, double width, const std::string& role,
                       model::ToyConvNet* out_model = nullptr,
                       const data::Dataset* dataset = nullptr);

// End-to-end distillation: loads the teacher checkpoint, trains, writes
// trace CSV, student checkpoint and report under cfg.out.
RunResult run_distillation(const config::DistillConfig& cfg);

std::string report_json(const EvalReport& r);

}  // namespace dpk::harness
