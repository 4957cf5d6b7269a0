// refdrop: check | sweep | generate | bench
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "refdrop/commands.hpp"
#include "refdrop/config.hpp"

namespace {

using nlohmann::json;
using namespace refdrop::cli;

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset, out, precision, policy;
  std::optional<double> coefficient;
  std::optional<std::size_t> batch_size, steps;
  std::optional<std::size_t> trials, iterations, warmup;
  std::optional<std::string> check_grid, bench_grid, report;
  std::optional<double> threshold;
  bool inject_fault = false;
  bool no_adversarial = false;
  std::vector<double> sweep_coefficients;
};

json flag_overrides(const Flags& f) {
  json doc = json::object();
  if (f.seed) doc["seed"] = *f.seed;
  if (f.preset) doc["preset"] = *f.preset;
  if (f.out) doc["output_dir"] = *f.out;
  if (f.precision) doc["precision"] = *f.precision;
  if (f.policy) doc["policy"] = *f.policy;
  if (f.coefficient) doc["coefficient"] = *f.coefficient;
  if (f.batch_size) doc["batch_size"] = *f.batch_size;
  if (f.steps) doc["steps"] = *f.steps;
  json check = json::object();
  if (f.trials) check["trials"] = *f.trials;
  if (f.check_grid) check["grid"] = *f.check_grid;
  if (f.threshold) check["threshold"] = *f.threshold;
  if (f.report) check["report"] = *f.report;
  if (f.inject_fault) check["inject_fault"] = true;
  if (f.no_adversarial) check["adversarial"] = false;
  if (!check.empty()) doc["check"] = check;
  if (!f.sweep_coefficients.empty()) doc["sweep"] = {{"coefficients", f.sweep_coefficients}};
  json bench = json::object();
  if (f.bench_grid) bench["grid"] = *f.bench_grid;
  if (f.iterations) bench["iterations"] = *f.iterations;
  if (f.warmup) bench["warmup"] = *f.warmup;
  if (!bench.empty()) doc["bench"] = bench;
  return doc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference feature guidance: equivalence check, sweeps, toy generation, bench"};
  app.require_subcommand(1);
  Flags f;

  app.add_option("--config", f.config_path, "JSON config file");
  app.add_option("--seed", f.seed, "Base seed (weights, suite, bench)");
  app.add_option("--preset", f.preset, "consistent | diverse | temporal | blend | custom");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--precision", f.precision, "f32 | f64");
  app.add_option("--policy", f.policy,
                 "plain | concat | cross_frame | rfg | rfg_multi | rfg_rank1");
  app.add_option("--coefficient", f.coefficient, "Reference strength for rfg");
  app.add_option("--batch-size", f.batch_size, "Samples per batch");
  app.add_option("--steps", f.steps, "Denoising steps");

  auto* check = app.add_subcommand("check", "Rank-1 equivalence suite against the naive oracle");
  check->add_option("--trials", f.trials, "Trials per grid cell");
  check->add_option("--grid", f.check_grid, "LxDxDV[,LxDxDV...]");
  check->add_option("--threshold", f.threshold, "Max relative error allowed");
  check->add_option("--report", f.report, "Report path, '-' for stdout");
  check->add_flag("--inject-fault", f.inject_fault, "Perturb the coefficient (negative control)");
  check->add_flag("--no-adversarial", f.no_adversarial, "Skip the x100 logit pass");

  auto* sweep = app.add_subcommand("sweep", "Distance to the reference per coefficient");
  sweep->add_option("--coefficients", f.sweep_coefficients, "Coefficient list")->delimiter(',');

  app.add_subcommand("generate", "Run the toy pipeline and write samples");

  auto* bench = app.add_subcommand("bench", "Time plain, concat and rfg attention");
  bench->add_option("--grid", f.bench_grid, "LxDxDVxB[,LxDxDVxB...]");
  bench->add_option("--iterations", f.iterations, "Timed iterations per cell");
  bench->add_option("--warmup", f.warmup, "Untimed iterations per cell");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  RunConfig config;
  try {
    json doc = f.config_path.empty() ? json::object() : load_config_file(f.config_path);
    const json overrides = flag_overrides(f);
    // A preset chosen on the command line replaces the file's policy choice.
    if (overrides.contains("preset")) {
      for (const char* key : {"policy", "coefficient", "coefficients"})
        if (!overrides.contains(key)) doc.erase(key);
    }
    merge_json(doc, overrides);
    config = resolve_config(doc);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  return run_command(app.get_subcommands().front()->get_name(), config, std::cout, std::cerr);
}
