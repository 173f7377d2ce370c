#pragma once

// Command implementations behind the `pt4al` executable: JSON config
// parsing, file outputs and reproducibility manifests.

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pt4al/al_loop.hpp"
#include "pt4al/checkpoint.hpp"
#include "pt4al/diagnostics.hpp"
#include "pt4al/error.hpp"
#include "pt4al/pretext.hpp"
#include "pt4al/sampler.hpp"

namespace pt4al::app {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

struct AppConfig {
  std::uint64_t seed = 0;
  fs::path output_dir = "pt4al-out";
  DatasetSpec dataset;
  ALConfig al;
  fs::path losses_path;          // default: <output_dir>/losses.csv
  fs::path pretext_checkpoint;   // default: <output_dir>/pretext.ckpt.json
  fs::path main_checkpoint;      // optional, used by `correlate`
  std::vector<std::uint64_t> coldstart_seeds;
  std::vector<std::uint64_t> ablation_seeds;

  fs::path losses() const { return losses_path.empty() ? output_dir / "losses.csv" : losses_path; }
  fs::path pretext_ckpt() const {
    return pretext_checkpoint.empty() ? output_dir / "pretext.ckpt.json" : pretext_checkpoint;
  }
};

/// Optional overrides from the command line.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> strategy;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> budget;
  std::optional<std::string> first_iteration;
  std::vector<std::uint64_t> seeds;
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  require(j.is_object(), where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    require(ok, "unknown key '" + key + "' in " + where);
  }
}

inline fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

}  // namespace detail

/// Parses the documented JSON schema. Relative paths resolve against
/// `base_dir` (the directory holding the config file).
inline AppConfig parse_config(const json& j, const fs::path& base_dir) {
  try {
    detail::check_keys(j,
                       {"seed", "output_dir", "dataset", "iterations", "budget", "strategy", "first_iteration",
                        "pretext", "main", "losses", "pretext_checkpoint", "main_checkpoint", "coldstart_seeds",
                        "ablation_seeds"},
                       "config");
    AppConfig c;
    c.seed = j.value("seed", c.seed);
    c.output_dir = detail::resolve(base_dir, j.value("output_dir", c.output_dir.string()));

    require(j.contains("dataset"), "config needs a dataset section");
    const auto& d = j.at("dataset");
    detail::check_keys(d,
                       {"kind", "per_class", "classes", "size", "noise", "seed", "images", "labels",
                        "test_fraction", "split_seed", "imbalance"},
                       "dataset");
    const auto kind = d.value("kind", std::string("synthetic"));
    if (kind == "synthetic") {
      c.dataset.kind = DatasetSpec::Kind::synthetic;
      c.dataset.synthetic.per_class = d.value("per_class", c.dataset.synthetic.per_class);
      c.dataset.synthetic.classes = d.value("classes", c.dataset.synthetic.classes);
      c.dataset.synthetic.size = d.value("size", c.dataset.synthetic.size);
      c.dataset.synthetic.noise = d.value("noise", c.dataset.synthetic.noise);
      c.dataset.synthetic.seed = d.value("seed", c.seed);
    } else if (kind == "idx") {
      c.dataset.kind = DatasetSpec::Kind::idx;
      require(d.contains("images") && d.contains("labels"), "idx dataset needs 'images' and 'labels' paths");
      c.dataset.images_path = detail::resolve(base_dir, d.at("images").get<std::string>()).string();
      c.dataset.labels_path = detail::resolve(base_dir, d.at("labels").get<std::string>()).string();
    } else {
      throw ValidationError("dataset kind must be 'synthetic' or 'idx', got '" + kind + "'");
    }
    c.dataset.test_fraction = d.value("test_fraction", c.dataset.test_fraction);
    c.dataset.split_seed = d.value("split_seed", c.seed);
    if (d.contains("imbalance")) {
      const auto& im = d.at("imbalance");
      detail::check_keys(im, {"counts", "ramp_scale"}, "dataset.imbalance");
      c.dataset.imbalanced = true;
      if (im.contains("counts")) c.dataset.imbalance_counts = im.at("counts").get<std::vector<std::size_t>>();
      c.dataset.ramp_scale = im.value("ramp_scale", c.dataset.ramp_scale);
    }

    c.al.iterations = j.value("iterations", c.al.iterations);
    c.al.budget = j.value("budget", c.al.budget);
    c.al.strategy = parse_strategy(j.value("strategy", std::string("pt4al")));
    c.al.first_rule = parse_first_rule(j.value("first_iteration", std::string("uniform")));
    c.al.seed = c.seed;
    if (j.contains("pretext")) c.al.pretext = j.at("pretext").get<LearnerConfig>();
    if (j.contains("main")) c.al.main = j.at("main").get<LearnerConfig>();
    if (j.contains("losses")) c.losses_path = detail::resolve(base_dir, j.at("losses").get<std::string>());
    if (j.contains("pretext_checkpoint")) {
      c.pretext_checkpoint = detail::resolve(base_dir, j.at("pretext_checkpoint").get<std::string>());
    }
    if (j.contains("main_checkpoint")) {
      c.main_checkpoint = detail::resolve(base_dir, j.at("main_checkpoint").get<std::string>());
    }
    if (j.contains("coldstart_seeds")) c.coldstart_seeds = j.at("coldstart_seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("ablation_seeds")) c.ablation_seeds = j.at("ablation_seeds").get<std::vector<std::uint64_t>>();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid config: ") + e.what());
  }
}

inline AppConfig load_config(const fs::path& path, const Overrides& o = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  auto c = parse_config(j, path.parent_path());
  if (o.seed) {
    c.seed = *o.seed;
    c.al.seed = *o.seed;
  }
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.strategy) c.al.strategy = parse_strategy(*o.strategy);
  if (o.iterations) c.al.iterations = *o.iterations;
  if (o.budget) c.al.budget = *o.budget;
  if (o.first_iteration) c.al.first_rule = parse_first_rule(*o.first_iteration);
  return c;
}

/// Effective configuration, echoed into manifests.
inline json config_echo(const AppConfig& c) {
  json d;
  if (c.dataset.kind == DatasetSpec::Kind::synthetic) {
    d = {{"kind", "synthetic"},
         {"per_class", c.dataset.synthetic.per_class},
         {"classes", c.dataset.synthetic.classes},
         {"size", c.dataset.synthetic.size},
         {"noise", c.dataset.synthetic.noise},
         {"seed", c.dataset.synthetic.seed}};
  } else {
    d = {{"kind", "idx"}, {"images", c.dataset.images_path}, {"labels", c.dataset.labels_path}};
  }
  d["test_fraction"] = c.dataset.test_fraction;
  d["split_seed"] = c.dataset.split_seed;
  if (c.dataset.imbalanced) d["imbalance"] = {{"counts", c.dataset.imbalance_counts}, {"ramp_scale", c.dataset.ramp_scale}};
  return {{"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"dataset", d},
          {"iterations", c.al.iterations},
          {"budget", c.al.budget},
          {"strategy", strategy_name(c.al.strategy)},
          {"first_iteration", first_rule_name(c.al.first_rule)},
          {"pretext", c.al.pretext},
          {"main", c.al.main}};
}

// ---------------------------------------------------------------------------
// Checksums and outputs

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw RuntimeError("SHA-256 computation failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

/// Output files staged in memory and written together once a command has
/// finished, so that a failing command leaves nothing behind.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

  fs::path path(const std::string& name) const { return dir_ / name; }

  void add(const std::string& name, std::string contents) { files_[name] = std::move(contents); }

  /// Writes all staged files, then the manifest listing their checksums.
  void commit(json manifest, const std::string& manifest_name) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw RuntimeError("cannot create output directory " + dir_.string() + ": " + ec.message());
    json outputs = json::object();
    for (const auto& [name, contents] : files_) {
      write(name, contents);
      outputs[path(name).string()] = sha256_hex(contents);
    }
    manifest["outputs"] = std::move(outputs);
    write(manifest_name, manifest.dump(2) + "\n");
  }

 private:
  void write(const std::string& name, const std::string& contents) const {
    std::ofstream out(path(name), std::ios::binary);
    out << contents;
    if (!out) throw RuntimeError("failed writing " + path(name).string());
  }

  fs::path dir_;
  std::map<std::string, std::string> files_;
};

inline json base_manifest(const std::string& command, const AppConfig& c) {
  return {{"tool", "pt4al"}, {"version", kToolVersion}, {"command", command}, {"config", config_echo(c)}};
}

inline json dataset_inputs(const AppConfig& c) {
  json inputs = json::object();
  if (c.dataset.kind == DatasetSpec::Kind::idx) {
    inputs[c.dataset.images_path] = sha256_file(c.dataset.images_path);
    inputs[c.dataset.labels_path] = sha256_file(c.dataset.labels_path);
  }
  return inputs;
}

inline PreparedData load_data(const AppConfig& c) {
  if (c.dataset.kind == DatasetSpec::Kind::idx) {
    require(fs::exists(c.dataset.images_path), "dataset image file not found: " + c.dataset.images_path);
    require(fs::exists(c.dataset.labels_path), "dataset label file not found: " + c.dataset.labels_path);
  }
  return prepare_dataset(c.dataset);
}

template <typename Writer>
std::string render(Writer&& writer) {
  std::ostringstream out;
  writer(out);
  return out.str();
}

inline std::vector<LossRecord> require_losses(const AppConfig& c) {
  const auto path = c.losses();
  if (!fs::exists(path)) {
    throw ValidationError("pretext losses not found at " + path.string() + "; run pretext first");
  }
  return read_loss_csv(path);
}

// ---------------------------------------------------------------------------
// Commands. Each returns normally on success and throws ValidationError
// (exit 1) or another exception (exit 2) on failure.

inline void cmd_pretext(const AppConfig& c, std::ostream& log) {
  const auto data = load_data(c);
  auto [model, report] = train_pretext(data.unlabeled, pretext_config_for(c.al));
  log << "pretext: best epoch " << report.best_epoch << ", rotation accuracy " << format_real(report.accuracy)
      << ", " << report.records.size() << " loss records\n";

  OutputSet out(c.output_dir);
  out.add(c.losses().filename().string(), render([&](std::ostream& o) { write_loss_csv(o, report.records); }));
  out.add(c.pretext_ckpt().filename().string(), checkpoint_json(model).dump() + "\n");
  out.add("pool.csv", render([&](std::ostream& o) { write_pool_manifest(o, data.truth, data.test); }));
  auto manifest = base_manifest("pretext", c);
  manifest["seeds"] = {{"run", c.seed}, {"pretext_init", pretext_config_for(c.al).seed}};
  manifest["inputs"] = dataset_inputs(c);
  manifest["pretext"] = {{"best_epoch", report.best_epoch}, {"rotation_accuracy", report.accuracy}};
  out.commit(std::move(manifest), "pretext_manifest.json");
}

inline void cmd_plan(const AppConfig& c, std::ostream& log) {
  const auto records = require_losses(c);
  const auto order = c.al.strategy == Strategy::low_loss_first ? BatchOrder::low_loss_first
                                                                : BatchOrder::high_loss_first;
  const auto plan = build_batch_plan(records, c.al.iterations, order);
  log << "plan: " << plan.batches.size() << " batches over " << plan.total() << " samples\n";
  OutputSet out(c.output_dir);
  out.add("plan.csv", render([&](std::ostream& o) { write_plan_csv(o, plan); }));
  auto manifest = base_manifest("plan", c);
  manifest["inputs"] = {{c.losses().string(), sha256_file(c.losses())}};
  out.commit(std::move(manifest), "plan_manifest.json");
}

namespace detail {

struct StrategyRun {
  RunResult result;
  json inputs = json::object();
};

inline StrategyRun run_strategy(const AppConfig& c, const PreparedData& data, Strategy strategy,
                                std::uint64_t seed, std::ostream& log) {
  ALConfig al = c.al;
  al.strategy = strategy;
  al.seed = seed;
  StrategyRun run;
  run.inputs = dataset_inputs(c);
  std::optional<std::vector<LossRecord>> losses;
  if (needs_pretext(strategy)) {
    losses = require_losses(c);
    run.inputs[c.losses().string()] = sha256_file(c.losses());
  }
  RunOptions options;
  options.on_iteration = [&](const IterationReport& r) {
    log << strategy_name(strategy) << " seed " << seed << " iteration " << r.iteration << ": labeled "
        << r.labeled_size << ", accuracy " << format_real(r.accuracy) << ", class balance "
        << format_real(r.class_balance()) << " (" << std::fixed << std::setprecision(2) << r.wall_seconds
        << "s)\n" << std::defaultfloat;
  };
  run.result = run_al(al, data, std::move(losses), options);
  return run;
}

inline std::string query_csv(const RunResult& r) {
  return render([&](std::ostream& o) {
    write_query_csv_header(o);
    for (const auto& q : r.queries) write_query_rows(o, q);
  });
}

}  // namespace detail

inline void cmd_run(const AppConfig& c, std::ostream& log) {
  if (needs_pretext(c.al.strategy)) require_losses(c);
  const auto data = load_data(c);
  c.al.validate(data.unlabeled.size());
  auto run = detail::run_strategy(c, data, c.al.strategy, c.seed, log);

  const std::string name = strategy_name(c.al.strategy);
  OutputSet out(c.output_dir);
  out.add("report_" + name + ".csv", render([&](std::ostream& o) { write_report_csv(o, run.result.reports); }));
  out.add("queries_" + name + ".csv", detail::query_csv(run.result));
  auto manifest = base_manifest("run", c);
  manifest["seeds"] = {{"run", c.seed}};
  manifest["inputs"] = std::move(run.inputs);
  out.commit(std::move(manifest), "run_" + name + "_manifest.json");
}

/// Runs the full method and every ablation variant for each seed.
inline void cmd_ablate(const AppConfig& c, const std::vector<Strategy>& variants, std::ostream& log) {
  require_losses(c);
  const auto data = load_data(c);
  c.al.validate(data.unlabeled.size());
  auto seeds = c.ablation_seeds;
  if (seeds.empty()) seeds.push_back(c.seed);

  std::vector<Strategy> strategies{Strategy::pt4al};
  for (auto v : variants) {
    require(is_ablation(v), "not an ablation variant: " + strategy_name(v));
    strategies.push_back(v);
  }
  std::ostringstream rows;
  rows << "strategy,seed,iteration,accuracy,labeled_size,class_balance\n";
  std::ostringstream summary;
  summary << "strategy,mean_final_accuracy\n";
  json inputs;
  for (auto s : strategies) {
    double final_sum = 0.0;
    for (auto seed : seeds) {
      auto run = detail::run_strategy(c, data, s, seed, log);
      inputs = run.inputs;
      for (const auto& r : run.result.reports) {
        rows << strategy_name(s) << ',' << seed << ',' << r.iteration << ',' << format_real(r.accuracy) << ','
             << r.labeled_size << ',' << format_real(r.class_balance()) << '\n';
      }
      final_sum += run.result.reports.back().accuracy;
    }
    const double mean = final_sum / static_cast<double>(seeds.size());
    summary << strategy_name(s) << ',' << format_real(mean) << '\n';
    log << "ablate: " << strategy_name(s) << " mean final accuracy " << format_real(mean) << '\n';
  }
  OutputSet out(c.output_dir);
  out.add("ablation.csv", rows.str());
  out.add("ablation_summary.csv", summary.str());
  auto manifest = base_manifest("ablate", c);
  manifest["seeds"] = seeds;
  manifest["inputs"] = inputs;
  out.commit(std::move(manifest), "ablation_manifest.json");
}

inline void cmd_coldstart(const AppConfig& c, std::vector<std::uint64_t> seeds, std::ostream& log) {
  if (seeds.empty()) seeds = c.coldstart_seeds;
  require(seeds.size() >= 2, "coldstart needs at least 2 seeds (--seeds or coldstart_seeds)");
  const auto losses = require_losses(c);
  const auto data = load_data(c);
  c.al.validate(data.unlabeled.size());
  const auto summary = cold_start_experiment(c.al, data, losses, seeds);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    log << "coldstart seed " << seeds[i] << ": pt4al " << format_real(summary.pt4al[i]) << ", random "
        << format_real(summary.random[i]) << '\n';
  }
  OutputSet out(c.output_dir);
  out.add("coldstart.csv", render([&](std::ostream& o) { write_coldstart_csv(o, summary); }));
  out.add("coldstart_summary.csv", render([&](std::ostream& o) { write_summary_csv(o, summary); }));
  auto manifest = base_manifest("coldstart", c);
  manifest["seeds"] = seeds;
  auto inputs = dataset_inputs(c);
  inputs[c.losses().string()] = sha256_file(c.losses());
  manifest["inputs"] = inputs;
  out.commit(std::move(manifest), "coldstart_manifest.json");
}

inline LearnerState load_trained(const fs::path& path, const std::string& role) {
  require(fs::exists(path), role + " checkpoint not found: " + path.string());
  auto state = load_checkpoint(path);
  require(state.trained_epochs > 0, role + " checkpoint " + path.string() + " is untrained");
  return state;
}

/// Rank correlation of pretext and main-task losses on the test split. The
/// main model comes from `main_checkpoint` or is trained on the full,
/// labeled training split.
inline void cmd_correlate(const AppConfig& c, std::ostream& log) {
  const auto pretext_model = load_trained(c.pretext_ckpt(), "pretext");
  require(pretext_model.config.classes == kOrientations, "pretext checkpoint is not a rotation model");
  const auto data = load_data(c);
  LearnerState main_model;
  json inputs = dataset_inputs(c);
  inputs[c.pretext_ckpt().string()] = sha256_file(c.pretext_ckpt());
  if (!c.main_checkpoint.empty()) {
    main_model = load_trained(c.main_checkpoint, "main");
    inputs[c.main_checkpoint.string()] = sha256_file(c.main_checkpoint);
  } else {
    auto cfg = main_config_for(c.al, data, 0);
    cfg.seed = derive_seed(c.seed, "correlate-main");
    main_model = train(init_learner(cfg), to_labeled_set(data.truth), cfg).state;
  }
  const auto report = correlation_report(pretext_model, main_model, data.test, derive_seed(c.seed, "scatter"));
  log << "correlate: spearman rho " << format_real(report.rho) << " over " << report.n << " test samples\n";

  OutputSet out(c.output_dir);
  out.add("correlation.csv", "rho,n\n" + format_real(report.rho) + "," + std::to_string(report.n) + "\n");
  out.add("scatter.csv", render([&](std::ostream& o) { write_scatter_csv(o, report); }));
  auto manifest = base_manifest("correlate", c);
  manifest["seeds"] = {{"run", c.seed}};
  manifest["inputs"] = inputs;
  out.commit(std::move(manifest), "correlate_manifest.json");
}

}  // namespace pt4al::app
