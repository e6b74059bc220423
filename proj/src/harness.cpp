#include "dpk/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

#include "dpk/archive.hpp"
#include "dpk/losses.hpp"
#include "dpk/rng.hpp"
#include "json.hpp"

namespace dpk::harness {

namespace fs = std::filesystem;
using nn::Matrix;
using nn::Tensor4;

namespace {
// The synthetic dataset is a fixed artifact: every run sees the same data
// regardless of the run seed, so multi-seed comparisons are paired.
constexpr uint64_t kDatasetSeed = 0xd474u;
}  // namespace

EvalReport evaluate(model::ToyConvNet& m, const data::DatasetSplit& d, int batch_size) {
  EvalReport r;
  r.n_examples = d.size();
  const int topk = std::min(5, m.classes());
  int hits1 = 0, hits5 = 0;
  double cls_acc = 0.0;
  for (int start = 0; start < d.size(); start += batch_size) {
    std::vector<int> idx(std::min(batch_size, d.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    data::DatasetSplit batch = data::take_batch(d, idx);
    Matrix logits = m.forward(batch.images);
    cls_acc += nn::softmax_cross_entropy(logits, batch.labels, nullptr) * batch.size();
    for (int i = 0; i < batch.size(); ++i) {
      const int label = batch.labels[i];
      const double z = logits(i, label);
      int rank = 0;
      for (int j = 0; j < logits.cols(); ++j) {
        if (j == label) continue;
        if (logits(i, j) > z || (logits(i, j) == z && j < label)) ++rank;
      }
      if (rank < 1) ++hits1;
      if (rank < topk) ++hits5;
    }
  }
  r.top1 = 100.0 * hits1 / std::max(1, d.size());
  r.top5 = 100.0 * hits5 / std::max(1, d.size());
  r.cls_loss = cls_acc / std::max(1, d.size());
  return r;
}

// ----- checkpoints -----

namespace {
constexpr char kCkptMagic[4] = {'D', 'P', 'K', 'C'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void ws(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T rs(std::istream& i) {
  T v{};
  i.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!i) throw InvalidInputError("checkpoint truncated");
  return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamRefs& params, uint64_t config_hash,
                     uint64_t seed) {
  if (const fs::path dir = fs::path(path).parent_path(); !dir.empty()) {
    fs::create_directories(dir);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("cannot write checkpoint: " + path);
  out.write(kCkptMagic, 4);
  ws<uint32_t>(out, kCkptVersion);
  ws<uint64_t>(out, config_hash);
  ws<uint64_t>(out, seed);
  ws<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const auto* p : params) {
    ws<uint32_t>(out, static_cast<uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    ws<uint32_t>(out, static_cast<uint32_t>(p->value.rows()));
    ws<uint32_t>(out, static_cast<uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j)
        ws<float>(out, static_cast<float>(p->value(i, j)));
  }
}

void load_checkpoint(const std::string& path, const nn::ParamRefs& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("missing checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw InvalidInputError("not a DPK checkpoint: " + path);
  }
  if (rs<uint32_t>(in) != kCkptVersion) throw InvalidInputError("unsupported checkpoint version");
  rs<uint64_t>(in);  // config hash (informational)
  rs<uint64_t>(in);  // seed
  const uint32_t count = rs<uint32_t>(in);
  std::map<std::string, Matrix> loaded;
  for (uint32_t t = 0; t < count; ++t) {
    const uint32_t len = rs<uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const uint32_t rows = rs<uint32_t>(in);
    const uint32_t cols = rs<uint32_t>(in);
    Matrix m(rows, cols);
    for (uint32_t i = 0; i < rows; ++i)
      for (uint32_t j = 0; j < cols; ++j) m(i, j) = rs<float>(in);
    loaded.emplace(std::move(name), std::move(m));
  }
  for (auto* p : params) {
    auto it = loaded.find(p->name);
    if (it == loaded.end()) throw InvalidInputError("checkpoint missing parameter: " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw ShapeError("checkpoint shape mismatch for " + p->name);
    }
    p->value = it->second;
  }
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, uint64_t seed, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "batches", static_cast<uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int len = std::min(batch_size, n - start);
    batches.emplace_back(order.begin() + start, order.begin() + start + len);
  }
  // HSIC needs >= 4 examples; merge a tiny trailing batch into the previous
  if (batches.size() >= 2 && static_cast<int>(batches.back().size()) < 4) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

// ----- Distiller -----

Distiller::Distiller(const config::DistillConfig& cfg, const data::Dataset* dataset) : cfg_(cfg) {
  if (dataset) {
    dataset_ = dataset;
  } else {
    owned_dataset_ = data::make_synthetic_dataset(cfg.dataset, derive_seed(kDatasetSeed, "dataset"));
    dataset_ = &*owned_dataset_;
  }
  teacher_ = std::make_unique<model::ToyConvNet>(3, cfg.dataset.classes, cfg.model.teacher_width,
                                                 cfg.model.base_channels,
                                                 derive_seed(cfg.seed, "teacher-init"));
  student_ = std::make_unique<model::ToyConvNet>(3, cfg.dataset.classes, cfg.model.student_width,
                                                 cfg.model.base_channels,
                                                 derive_seed(cfg.seed, "student-init"));
  mask_seed_ = cfg.mask.seed != 0 ? cfg.mask.seed : derive_seed(cfg.seed, "mask");

  for (int s : cfg.stages) stage_ids_.push_back(s - 1);

  nn::ParamRefs train_params = student_->params();
  for (int s : stage_ids_) {
    const int h = cfg.dataset.image_size >> s;
    transforms_.push_back(std::make_unique<transform::StageTransform>(
        cfg.transform, student_->stage_channels(s), teacher_->stage_channels(s), h, h, cfg.seed,
        s + 1));
    ScheduleState st;
    st.pi0 = cfg.mask.pi0;
    st.linear_decrement = cfg.mask.linear_decrement;
    const std::string& strat = cfg.mask.strategy;
    if (strat == "random" || strat == "block" || strat == "grid") {
      st.strategy = ScheduleStrategy::kFixed;
      st.pi0 = cfg.mask.ratio;
    } else {
      st.strategy = parse_schedule_strategy(strat);
    }
    schedules_.push_back(st);
    for (auto* p : transforms_.back()->trainable_params()) train_params.push_back(p);
  }
  optimizer_ = std::make_unique<nn::SgdOptimizer>(train_params, cfg.optimizer.lr,
                                                  cfg.optimizer.momentum,
                                                  cfg.optimizer.weight_decay);
}

void Distiller::load_teacher(const std::string& path) {
  auto params = teacher_->params();
  load_checkpoint(path, params);
}

void Distiller::adopt_teacher(model::ToyConvNet& trained) {
  auto src = trained.params();
  auto dst = teacher_->params();
  if (src.size() != dst.size()) throw ShapeError("adopt_teacher: parameter count mismatch");
  for (size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
}

uint64_t Distiller::teacher_checksum() const {
  return nn::params_checksum(teacher_->params());
}

int Distiller::steps_per_epoch() const {
  return static_cast<int>(
      epoch_batches(dataset_->train.size(), cfg_.optimizer.batch_size, cfg_.seed, 0).size());
}

std::vector<MaskPattern> Distiller::draw_masks(int stage_slot, int batch, int64_t step_index,
                                               double ratio) {
  const int rows = transforms_[stage_slot]->grid_rows();
  const int cols = transforms_[stage_slot]->grid_cols();
  std::vector<MaskPattern> masks;
  masks.reserve(batch);
  for (int i = 0; i < batch; ++i) {
    // reproducible from (seed, step, sample index)
    Rng rng(derive_seed(mask_seed_, "mask", (static_cast<uint64_t>(step_index) << 20) |
                                                (static_cast<uint64_t>(stage_slot) << 14) |
                                                static_cast<uint64_t>(i)));
    if (cfg_.mask.strategy == "grid") {
      masks.push_back(grid_mask(rows, cols));
    } else if (cfg_.mask.strategy == "block") {
      masks.push_back(block_mask(rows, cols, ratio, rng));
    } else {
      masks.push_back(random_mask(rows, cols, ratio, rng));
    }
  }
  return masks;
}

StepMetrics Distiller::distill_step(const data::DatasetSplit& batch, int64_t step_index,
                                    int epoch) {
  StepMetrics metrics;
  optimizer_->zero_grad();

  std::array<Tensor4, model::ToyConvNet::kStages> t_stages, s_stages;
  Matrix t_logits = teacher_->forward(batch.images, &t_stages);
  Matrix s_logits = student_->forward(batch.images, &s_stages);

  Matrix dcls;
  metrics.cls = nn::softmax_cross_entropy(s_logits, batch.labels, &dcls);
  Matrix dkd;
  metrics.logits = losses::logits_kd_loss(s_logits, t_logits, cfg_.kd.tau, cfg_.kd.tau_squared,
                                          &dkd);
  Matrix dlogits = dcls + cfg_.kd.alpha * dkd;

  const losses::Region region = losses::parse_region(cfg_.kd.region);
  const transform::Filler filler = transform::parse_filler(cfg_.kd.filler);
  std::map<int, Tensor4> stage_grads;

  for (size_t slot = 0; slot < stage_ids_.size(); ++slot) {
    const int s = stage_ids_[slot];
    // similarity on detached flattened stage features, double precision
    Matrix xs = s_stages[s].flatten_rows();
    Matrix xt = t_stages[s].flatten_rows();
    double cka = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> cka_opt;
    try {
      cka = cka_minibatch({xs}, {xt});
      cka_opt = cka;
    } catch (const DegenerateBatchError&) {
      // fall back to the schedule's previous ratio
    }
    const double cosine = cosine_gap(xs, xt, derive_seed(cfg_.seed, "cosine-proj"));

    ScheduleState& sched = schedules_[slot];
    sched.epoch = epoch;
    std::optional<double> similarity;
    if (sched.strategy == ScheduleStrategy::kCka) {
      similarity = cka_opt;
    } else if (sched.strategy == ScheduleStrategy::kCosine) {
      similarity = cosine;
    }
    double ratio = schedule_ratio(sched, similarity);
    if (cfg_.schedule_ema > 0.0) {
      ema_value_ = ema_value_ < 0.0 ? ratio
                                    : cfg_.schedule_ema * ema_value_ +
                                          (1.0 - cfg_.schedule_ema) * ratio;
      ratio = ema_value_;
    }

    std::vector<MaskPattern> masks = draw_masks(static_cast<int>(slot), batch.size(), step_index,
                                                ratio);
    double feat = 0.0;
    if (cfg_.kd.beta > 0.0) {
      Tensor4 pred = transforms_[slot]->forward(s_stages[s], t_stages[s], masks, filler);
      Tensor4 dpred;
      const std::vector<MaskPattern>* mask_arg =
          transforms_[slot]->variant() == transform::Variant::kConv ? nullptr : &masks;
      feat = losses::feature_loss(pred, t_stages[s],
                                  region == losses::Region::kNonMasked ? mask_arg : nullptr,
                                  transforms_[slot]->variant() == transform::Variant::kConv
                                      ? losses::Region::kFull
                                      : region,
                                  &dpred);
      const double scale = cfg_.kd.beta;  // stage weights default 1.0
      for (auto& v : dpred.data) v *= scale;
      stage_grads[s] = transforms_[slot]->backward(dpred);
    }
    metrics.feat += feat;
    metrics.cka = cka_opt.value_or(cka);
    metrics.cosine = cosine;
    metrics.ratio = ratio;

    const double total = losses::total_loss(metrics.cls, metrics.logits, feat,
                                            {cfg_.kd.alpha, cfg_.kd.beta, {}});
    if (!std::isfinite(total)) {
      fs::create_directories(cfg_.out);
      const std::string dump = cfg_.out + "/diagnostic_stage" + std::to_string(s + 1) + ".dpkf";
      archive::write_archive(
          dump, {{"student_feat", true,
                  {static_cast<uint32_t>(s_stages[s].b), static_cast<uint32_t>(s_stages[s].c),
                   static_cast<uint32_t>(s_stages[s].h), static_cast<uint32_t>(s_stages[s].w)},
                  s_stages[s].data},
                 {"teacher_feat", true,
                  {static_cast<uint32_t>(t_stages[s].b), static_cast<uint32_t>(t_stages[s].c),
                   static_cast<uint32_t>(t_stages[s].h), static_cast<uint32_t>(t_stages[s].w)},
                  t_stages[s].data}});
      throw std::runtime_error("non-finite loss at stage " + std::to_string(s + 1) +
                               "; tensors dumped to " + dump);
    }

    TraceEntry e;
    e.step = step_index;
    e.stage = s + 1;
    e.cka = metrics.cka;
    e.cosine = cosine;
    e.ratio = ratio;
    e.cls_loss = metrics.cls;
    e.logits_loss = metrics.logits;
    e.feat_loss = feat;
    trace_.append(e);
  }

  student_->backward(dlogits, stage_grads);
  optimizer_->step();
  return metrics;
}

RunResult Distiller::run() {
  const auto& opt = cfg_.optimizer;
  int64_t step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    optimizer_->set_lr(nn::cosine_lr(opt.lr, epoch, opt.epochs));
    for (const auto& idx : epoch_batches(dataset_->train.size(), opt.batch_size, cfg_.seed, epoch)) {
      distill_step(data::take_batch(dataset_->train, idx), step++, epoch);
    }
  }
  RunResult result;
  result.report = evaluate(*student_, dataset_->test);
  result.trace = trace_;
  if (!trace_.entries().empty()) {
    double cls = 0, logits = 0, feat = 0;
    const int spe = std::max(1, steps_per_epoch());
    int n = 0;
    for (const auto& e : trace_.entries()) {
      if (e.step / spe == opt.epochs - 1) {
        cls += e.cls_loss;
        logits += e.logits_loss;
        feat += e.feat_loss;
        ++n;
      }
    }
    if (n > 0) {
      result.report.logits_loss = logits / n;
      result.report.feat_loss = feat / n;
    }
  }
  return result;
}

// ----- baseline -----

RunResult run_baseline(const config::DistillConfig& cfg, double width, const std::string& role,
                       model::ToyConvNet* out_model, const data::Dataset* dataset) {
  std::optional<data::Dataset> owned;
  if (!dataset) {
    owned = data::make_synthetic_dataset(cfg.dataset, derive_seed(kDatasetSeed, "dataset"));
    dataset = &*owned;
  }
  model::ToyConvNet model(3, cfg.dataset.classes, width, cfg.model.base_channels,
                          derive_seed(cfg.seed, role + "-init"));
  nn::SgdOptimizer opt(model.params(), cfg.optimizer.lr, cfg.optimizer.momentum,
                       cfg.optimizer.weight_decay);
  SimilarityTrace trace;
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
    opt.set_lr(nn::cosine_lr(cfg.optimizer.lr, epoch, cfg.optimizer.epochs));
    for (const auto& idx :
         epoch_batches(dataset->train.size(), cfg.optimizer.batch_size, cfg.seed, epoch)) {
      data::DatasetSplit batch = data::take_batch(dataset->train, idx);
      opt.zero_grad();
      Matrix logits = model.forward(batch.images);
      Matrix dlogits;
      const double cls = nn::softmax_cross_entropy(logits, batch.labels, &dlogits);
      if (!std::isfinite(cls)) {
        throw std::runtime_error("non-finite classification loss in baseline run");
      }
      model.backward(dlogits);
      opt.step();
      TraceEntry e;
      e.step = step++;
      e.cls_loss = cls;
      trace.append(e);
    }
  }
  RunResult result;
  result.report = evaluate(model, dataset->test);
  result.trace = std::move(trace);
  if (out_model) *out_model = std::move(model);
  return result;
}

RunResult run_distillation(const config::DistillConfig& cfg) {
  Distiller distiller(cfg);
  if (cfg.teacher_checkpoint.empty()) {
    throw InvalidInputError("distillation requires teacher_checkpoint to be set");
  }
  distiller.load_teacher(cfg.teacher_checkpoint);
  RunResult result = distiller.run();
  fs::create_directories(cfg.out);
  result.trace.write_csv(cfg.out + "/trace.csv");
  auto params = distiller.student().params();
  save_checkpoint(cfg.out + "/student.ckpt", params, config::config_hash(cfg), cfg.seed);
  std::ofstream report(cfg.out + "/report.json");
  report << report_json(result.report);
  std::ofstream resolved(cfg.out + "/config.json");
  resolved << config::to_json(cfg);
  return result;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["top1"] = r.top1;
  j["top5"] = r.top5;
  j["n_examples"] = r.n_examples;
  j["cls_loss"] = r.cls_loss;
  j["logits_loss"] = r.logits_loss;
  j["feat_loss"] = r.feat_loss;
  return j.dump(2);
}

}  // namespace dpk::harness
