#include "refdrop/commands.hpp"

#include <filesystem>
#include <iostream>

#include "refdrop/bench.hpp"
#include "refdrop/oracle.hpp"
#include "refdrop/pipeline.hpp"

namespace refdrop::cli {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

template <typename T>
void append_sweep_rows(const pipeline::PipelineConfig& base, double c,
                       std::vector<io::SweepRow>& rows) {
  pipeline::PipelineConfig p = base;
  p.policy = policy::Rfg{c};
  p.layer_coefficients.clear();
  const auto trajectory = pipeline::generate_batch<T>(p);
  for (std::size_t i = 1; i < p.batch_size; ++i) {
    const auto distance = pipeline::trajectory_distance(trajectory, i);
    for (std::size_t step = 0; step < distance.size(); ++step) {
      rows.push_back({c, step, i, distance[step]});
    }
  }
}

template <typename T>
void write_samples(const RunConfig& config, std::ostream& out) {
  const auto trajectory = pipeline::generate_batch<T>(config.pipeline);
  const fs::path dir = config.output_dir;
  const std::string ext = sizeof(T) == 4 ? ".f32" : ".f64";
  const std::size_t side = config.pipeline.latent_size;
  for (std::size_t i = 0; i < trajectory.final().size(); ++i) {
    const auto& flat = trajectory.final()[i];
    const Matrix<T> image(side, side, std::vector<T>(flat.values().begin(), flat.values().end()));
    const std::string stem = "sample_" + std::to_string(i);
    io::write_raw(dir / (stem + ext), image);
    io::write_text(dir / (stem + ".pgm"), io::encode_pgm(image));
  }
  io::write_text(dir / "resolved_config.json", to_json(config).dump(2) + "\n");
  out << "wrote " << trajectory.final().size() << " samples to " << dir.string() << "\n";
}

}  // namespace

oracle::SuiteOptions suite_options(const RunConfig& config) {
  oracle::SuiteOptions options;
  options.seed = config.pipeline.weight_seed;
  options.grid = config.check.grid;
  options.trials_per_cell = config.check.trials_per_cell;
  options.precision = config.precision;
  options.threshold = config.check.threshold.value_or(oracle::default_threshold(config.precision));
  options.adversarial = config.check.adversarial;
  if (config.check.inject_fault) options.coefficient_fault = 0.1;
  return options;
}

int cmd_check(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto report = oracle::run_equivalence_suite(suite_options(config));
  const std::string text = io::to_json(report).dump(2) + "\n";
  std::ostream& log = config.check.report_path == "-" ? err : out;
  if (config.check.report_path == "-") {
    out << text;
  } else {
    fs::path path = config.check.report_path;
    if (path.empty()) {
      ensure_dir(config.output_dir);
      path = fs::path(config.output_dir) / "equivalence_report.json";
    }
    io::write_text(path, text);
    log << "report: " << path.string() << "\n";
  }
  log << (report.pass ? "PASS" : "FAIL") << " " << report.precision << " trials=" << report.trials
      << " max_rel_error=" << report.max_rel_error << " threshold=" << report.threshold;
  if (!report.pass) log << " worst_seed=" << report.worst_seed;
  log << "\n";
  return report.pass ? kExitOk : kExitCheckFailed;
}

std::vector<io::SweepRow> run_sweep(const RunConfig& config) {
  if (config.sweep.coefficients.empty())
    throw std::invalid_argument("sweep needs at least one coefficient");
  std::vector<io::SweepRow> rows;
  for (double c : config.sweep.coefficients) {
    if (config.precision == oracle::Precision::F32) {
      append_sweep_rows<float>(config.pipeline, c, rows);
    } else {
      append_sweep_rows<double>(config.pipeline, c, rows);
    }
  }
  return rows;
}

int cmd_sweep(const RunConfig& config, std::ostream& out, std::ostream&) {
  const auto rows = run_sweep(config);
  ensure_dir(config.output_dir);
  const fs::path path = fs::path(config.output_dir) / "sweep.csv";
  io::write_text(path, io::encode_sweep_csv(rows));
  out << "wrote " << rows.size() << " rows to " << path.string() << "\n";
  return kExitOk;
}

int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream&) {
  ensure_dir(config.output_dir);
  if (config.precision == oracle::Precision::F32) {
    write_samples<float>(config, out);
  } else {
    write_samples<double>(config, out);
  }
  return kExitOk;
}

int cmd_bench(const RunConfig& config, std::ostream& out, std::ostream&) {
  const auto report = bench::run_bench(config.bench.grid, config.bench.iterations,
                                       config.bench.warmup, config.precision,
                                       config.pipeline.weight_seed);
  ensure_dir(config.output_dir);
  const fs::path path = fs::path(config.output_dir) / "bench_report.json";
  io::write_text(path, bench::to_json(report).dump(2) + "\n");
  for (const auto& c : report.cells) {
    out << c.policy << " L=" << c.cell.seq_len << " d=" << c.cell.key_dim
        << " d_v=" << c.cell.value_dim << " B=" << c.cell.batch
        << " median_s=" << c.median_seconds << " calls_per_s=" << c.calls_per_second
        << " cache_reuse_bytes=" << c.cache_reuse_bytes << "\n";
  }
  out << "report: " << path.string() << "\n";
  return kExitOk;
}

int run_command(const std::string& name, const RunConfig& config, std::ostream& out,
                std::ostream& err) {
  try {
    if (name == "check") return cmd_check(config, out, err);
    if (name == "sweep") return cmd_sweep(config, out, err);
    if (name == "generate") return cmd_generate(config, out, err);
    if (name == "bench") return cmd_bench(config, out, err);
    err << "error: unknown command '" << name << "'\n";
    return kExitUsage;
  } catch (const io::IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace refdrop::cli
