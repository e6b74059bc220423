#include "dpk/cli.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "dpk/archive.hpp"
#include "dpk/config.hpp"
#include "dpk/harness.hpp"
#include "dpk/heatmap.hpp"
#include "dpk/rng.hpp"
#include "dpk/similarity.hpp"

namespace dpk::cli {

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "config file (JSON)");
  if (config_required) c->required();
  cmd->add_option("--override", opts.overrides, "key.path=value override (repeatable)");
  cmd->add_option("--seed", opts.seed, "override the run seed");
  cmd->add_option("--out", opts.out, "override the output directory");
}

config::DistillConfig resolve_config(const CommonOpts& opts) {
  std::ifstream in(opts.config_path);
  if (!in) throw ConfigError("cannot read config file: " + opts.config_path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  for (const auto& o : opts.overrides) text = config::apply_override(text, o);
  if (opts.seed >= 0) text = config::apply_override(text, "seed=" + std::to_string(opts.seed));
  if (!opts.out.empty()) text = config::apply_override(text, "out=\"" + opts.out + "\"");
  return config::parse_config(text);
}

int cmd_train(const CommonOpts& opts) {
  config::DistillConfig cfg = resolve_config(opts);
  model::ToyConvNet model(3, cfg.dataset.classes, cfg.model.teacher_width,
                          cfg.model.base_channels, derive_seed(cfg.seed, "teacher-init"));
  harness::RunResult result =
      harness::run_baseline(cfg, cfg.model.teacher_width, "teacher", &model);
  fs::create_directories(cfg.out);
  auto params = model.params();
  harness::save_checkpoint(cfg.out + "/model.ckpt", params, config::config_hash(cfg), cfg.seed);
  std::ofstream report(cfg.out + "/report.json");
  report << harness::report_json(result.report);
  std::cout << "top1=" << result.report.top1 << " top5=" << result.report.top5
            << " checkpoint=" << cfg.out << "/model.ckpt\n";
  return 0;
}

int cmd_distill(const CommonOpts& opts) {
  config::DistillConfig cfg = resolve_config(opts);
  harness::RunResult result = harness::run_distillation(cfg);
  std::cout << "top1=" << result.report.top1 << " top5=" << result.report.top5
            << " trace=" << cfg.out << "/trace.csv\n";
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& sweep_key,
               const std::vector<std::string>& sweep_values, const std::vector<int64_t>& seeds) {
  if (sweep_values.empty()) throw ConfigError("ablate: empty sweep value set");
  std::ifstream in(opts.config_path);
  if (!in) throw ConfigError("cannot read config file: " + opts.config_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string base_text = ss.str();
  // validate the sweep key against the schema before any compute
  config::parse_config(config::apply_override(base_text, sweep_key + "=" + sweep_values[0]));

  config::DistillConfig base_cfg = resolve_config(opts);
  std::vector<int64_t> seed_list = seeds.empty() ? std::vector<int64_t>{static_cast<int64_t>(base_cfg.seed)} : seeds;

  auto unquoted = [](const std::string& v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
  };

  std::ostringstream table;
  table << "key,value,seed,top1,top5\n";
  std::map<std::string, std::pair<double, int>> means;
  for (const auto& value : sweep_values) {
    const std::string label = unquoted(value);
    for (int64_t seed : seed_list) {
      std::string text = base_text;
      for (const auto& o : opts.overrides) text = config::apply_override(text, o);
      text = config::apply_override(text, sweep_key + "=" + value);
      text = config::apply_override(text, "seed=" + std::to_string(seed));
      const std::string out_dir = (opts.out.empty() ? base_cfg.out : opts.out) + "/" + sweep_key +
                                  "=" + label + "/seed" + std::to_string(seed);
      text = config::apply_override(text, "out=\"" + out_dir + "\"");
      config::DistillConfig cfg = config::parse_config(text);
      harness::RunResult result = harness::run_distillation(cfg);
      table << sweep_key << ',' << label << ',' << seed << ',' << result.report.top1 << ','
            << result.report.top5 << '\n';
      auto& m = means[label];
      m.first += result.report.top1;
      m.second += 1;
      std::cout << sweep_key << "=" << label << " seed=" << seed
                << " top1=" << result.report.top1 << "\n";
    }
  }
  table << "\nkey,value,mean_top1\n";
  for (const auto& [value, m] : means) {
    table << sweep_key << ',' << value << ',' << m.first / m.second << '\n';
  }
  const std::string out_dir = opts.out.empty() ? base_cfg.out : opts.out;
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir + "/ablation.csv");
  csv << table.str();
  std::cout << "summary=" << out_dir << "/ablation.csv\n";
  return 0;
}

int cmd_analyze_cka(const std::string& path_a, const std::string& path_b, int batch,
                    const std::string& out_dir, uint64_t seed) {
  if (batch < 4) throw ConfigError("analyze-cka: batch size must be >= 4");
  auto rows_a = archive::flatten_examples(archive::read_archive(path_a));
  auto rows_b = archive::flatten_examples(archive::read_archive(path_b));
  if (rows_a.size() != rows_b.size()) {
    throw InvalidInputError("analyze-cka: archives hold different example counts (" +
                            std::to_string(rows_a.size()) + " vs " +
                            std::to_string(rows_b.size()) + ")");
  }
  const int n = static_cast<int>(rows_a.size());
  if (n < 4) throw InvalidInputError("analyze-cka: need at least 4 examples");

  std::vector<std::pair<int, int>> spans;  // [start, len)
  for (int start = 0; start < n; start += batch) {
    spans.emplace_back(start, std::min(batch, n - start));
  }
  if (spans.size() >= 2 && spans.back().second < 4) {
    spans[spans.size() - 2].second += spans.back().second;
    spans.pop_back();
  }

  struct Row {
    int step;
    double cka, cosine, ratio;
  };
  std::vector<Row> out_rows;
  for (size_t bi = 0; bi < spans.size(); ++bi) {
    const auto [start, len] = spans[bi];
    Matrix x(len, static_cast<Eigen::Index>(rows_a[0].size()));
    Matrix y(len, static_cast<Eigen::Index>(rows_b[0].size()));
    for (int i = 0; i < len; ++i) {
      for (size_t j = 0; j < rows_a[0].size(); ++j) x(i, static_cast<Eigen::Index>(j)) = rows_a[start + i][j];
      for (size_t j = 0; j < rows_b[0].size(); ++j) y(i, static_cast<Eigen::Index>(j)) = rows_b[start + i][j];
    }
    double cka = 0.0;
    try {
      cka = cka_minibatch({x}, {y});
    } catch (const DegenerateBatchError&) {
      cka = 0.0;
    }
    out_rows.push_back({static_cast<int>(bi), cka, cosine_gap(x, y, seed), dynamic_ratio(cka)});
  }
  std::sort(out_rows.begin(), out_rows.end(),
            [](const Row& a, const Row& b) { return a.cka < b.cka; });

  fs::create_directories(out_dir);
  std::ofstream csv(out_dir + "/cka.csv");
  csv.precision(17);
  csv << "step,stage,cka,cosine,ratio\n";
  std::vector<double> values;
  for (const auto& r : out_rows) {
    csv << r.step << ",1," << r.cka << ',' << r.cosine << ',' << r.ratio << '\n';
    values.push_back(r.cka);
  }
  heatmap::write_heatmap_ppm(out_dir + "/heatmap.ppm", values);
  std::cout << "values=" << values.size() << " csv=" << out_dir << "/cka.csv"
            << " heatmap=" << out_dir << "/heatmap.ppm\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Dynamic prior-knowledge distillation toolkit"};
  app.require_subcommand(1);

  CommonOpts train_opts, distill_opts, ablate_opts;
  auto* train = app.add_subcommand("train", "supervised baseline training (teachers, scratch students)");
  add_common(train, train_opts);
  auto* distill = app.add_subcommand("distill", "run feature distillation with prior knowledge");
  add_common(distill, distill_opts);

  auto* ablate = app.add_subcommand("ablate", "sweep one config key over a value set");
  add_common(ablate, ablate_opts);
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  std::vector<int64_t> sweep_seeds;
  ablate->add_option("--sweep-key", sweep_key, "dotted config key to sweep");
  ablate->add_option("--sweep-values", sweep_values, "value set for the key");
  ablate->add_option("--seeds", sweep_seeds, "seed list (default: config seed)");
  ablate->add_option_function<std::vector<std::string>>(
      "--mask-strategy",
      [&sweep_key, &sweep_values](const std::vector<std::string>& vals) {
        sweep_key = "mask.strategy";
        for (const auto& v : vals) sweep_values.push_back(v);
      },
      "shorthand: sweep mask.strategy over these values");

  auto* analyze = app.add_subcommand("analyze-cka", "minibatch CKA between two feature archives");
  std::string archive_a, archive_b, analyze_out = "analysis";
  int analyze_batch = 32;
  uint64_t analyze_seed = 0;
  analyze->add_option("archive_a", archive_a, "first DPKF feature archive")->required();
  analyze->add_option("archive_b", archive_b, "second DPKF feature archive")->required();
  analyze->add_option("--batch", analyze_batch, "minibatch size (>= 4)");
  analyze->add_option("--out", analyze_out, "output directory");
  analyze->add_option("--seed", analyze_seed, "projection seed for the cosine column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_opts);
    if (distill->parsed()) return cmd_distill(distill_opts);
    if (ablate->parsed()) {
      if (sweep_key.empty() || sweep_values.empty()) {
        throw ConfigError("ablate: provide --sweep-key/--sweep-values or --mask-strategy");
      }
      // allow --sweep-values passed without requiring JSON quoting for strings
      for (auto& v : sweep_values) {
        if (!v.empty() && v.front() != '"' && !std::isdigit(static_cast<unsigned char>(v.front())) &&
            v != "true" && v != "false" && v.front() != '-' && v.front() != '[') {
          v = '"' + v + '"';
        }
      }
      return cmd_ablate(ablate_opts, sweep_key, sweep_values, sweep_seeds);
    }
    if (analyze->parsed()) {
      return cmd_analyze_cka(archive_a, archive_b, analyze_batch, analyze_out, analyze_seed);
    }
  } catch (const ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace dpk::cli
