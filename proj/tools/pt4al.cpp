#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pt4al/app.hpp"

namespace {

struct Options {
  std::string config;
  std::string output_dir;
  std::uint64_t seed = 0;
  std::string strategy;
  std::size_t iterations = 0;
  std::size_t budget = 0;
  std::string first_iteration;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> variants;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "JSON config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", o.output_dir, "output directory (overrides output_dir)");
  cmd->add_option("--seed", o.seed, "run seed (overrides seed)");
}

void add_loop(CLI::App* cmd, Options& o) {
  cmd->add_option("-s,--strategy", o.strategy,
                  "pt4al | random | entropy | pt4al-sampling-only | pt4al-pretext-only-high | "
                  "pt4al-pretext-only-low | pt4al-low-loss-first");
  cmd->add_option("--iterations", o.iterations, "number of AL iterations");
  cmd->add_option("--budget", o.budget, "samples labeled per iteration");
  cmd->add_option("--first-iteration", o.first_iteration, "uniform | top-k | random");
}

pt4al::app::Overrides overrides(const CLI::App& app, const Options& o) {
  pt4al::app::Overrides ov;
  auto given = [&](const char* name) {
    for (const auto* sub : app.get_subcommands()) {
      const auto* opt = sub->get_option_no_throw(name);
      if (opt != nullptr && opt->count() > 0) return true;
    }
    return false;
  };
  if (given("--seed")) ov.seed = o.seed;
  if (given("--out")) ov.output_dir = o.output_dir;
  if (given("--strategy")) ov.strategy = o.strategy;
  if (given("--iterations")) ov.iterations = o.iterations;
  if (given("--budget")) ov.budget = o.budget;
  if (given("--first-iteration")) ov.first_iteration = o.first_iteration;
  return ov;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pretext-task-driven active learning experiments"};
  app.set_version_flag("--version", pt4al::app::kToolVersion);
  app.require_subcommand(1);
  Options o;

  auto* pretext = app.add_subcommand("pretext", "train the rotation model and write per-sample losses");
  add_common(pretext, o);
  auto* plan = app.add_subcommand("plan", "split the loss-sorted pool into per-iteration batches");
  add_common(plan, o);
  add_loop(plan, o);
  auto* run = app.add_subcommand("run", "run the active learning loop for one strategy");
  add_common(run, o);
  add_loop(run, o);
  auto* coldstart = app.add_subcommand("coldstart", "first-iteration comparison with the random baseline");
  add_common(coldstart, o);
  add_loop(coldstart, o);
  coldstart->add_option("--seeds", o.seeds, "run seeds (at least two)");
  auto* correlate = app.add_subcommand("correlate", "rank correlation of pretext and main-task losses");
  add_common(correlate, o);
  auto* ablate = app.add_subcommand("ablate", "compare the full method against its ablations");
  add_common(ablate, o);
  add_loop(ablate, o);
  ablate->add_option("--variant", o.variants, "ablation variants (default: all)");
  ablate->add_option("--seeds", o.seeds, "run seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto config = pt4al::app::load_config(o.config, overrides(app, o));
    auto& log = std::cout;
    if (*pretext) {
      pt4al::app::cmd_pretext(config, log);
    } else if (*plan) {
      pt4al::app::cmd_plan(config, log);
    } else if (*run) {
      pt4al::app::cmd_run(config, log);
    } else if (*coldstart) {
      pt4al::app::cmd_coldstart(config, o.seeds, log);
    } else if (*correlate) {
      pt4al::app::cmd_correlate(config, log);
    } else if (*ablate) {
      if (!o.seeds.empty()) config.ablation_seeds = o.seeds;
      std::vector<pt4al::Strategy> variants;
      for (const auto& v : o.variants) variants.push_back(pt4al::parse_strategy(v));
      if (variants.empty()) {
        variants = {pt4al::Strategy::sampling_only, pt4al::Strategy::pretext_only_high,
                    pt4al::Strategy::pretext_only_low, pt4al::Strategy::low_loss_first};
      }
      pt4al::app::cmd_ablate(config, variants, log);
    }
  } catch (const pt4al::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
