#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "refdrop/bench.hpp"
#include "refdrop/oracle.hpp"
#include "refdrop/pipeline.hpp"

namespace refdrop::cli {

/// Configuration problem. `key()` is the dotted path of the offending key
/// (empty for whole-document problems such as a missing file).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : "config key '" + key + "': " + message),
        key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

enum class Preset { Consistent, Diverse, Temporal, Blend, Custom };

std::string preset_name(Preset p);
Preset parse_preset(const std::string& name);

// Reference strengths for the presets.
inline constexpr double kConsistentCoefficient = 0.35;  // recommended range [0.3, 0.4]
inline constexpr double kConsistentLow = 0.3;
inline constexpr double kConsistentHigh = 0.4;
inline constexpr double kDiverseCoefficient = -0.3;
inline constexpr double kTemporalCoefficient = 0.2;
inline constexpr double kBlendCoefficient = 0.3;  // per reference, range [0.2, 0.4]
inline constexpr double kBlendLow = 0.2;
inline constexpr double kBlendHigh = 0.4;

struct CheckOptions {
  std::size_t trials_per_cell = 19;
  std::vector<oracle::GridCell> grid = oracle::default_grid();
  std::optional<double> threshold;
  bool adversarial = true;
  bool inject_fault = false;
  // "-" writes to stdout; empty writes <output_dir>/equivalence_report.json.
  std::string report_path;
};

struct SweepOptions {
  std::vector<double> coefficients{-0.3, 0.0, 0.2, 0.35};
};

using bench::BenchCell;

struct BenchOptions {
  std::vector<BenchCell> grid{{64, 64, 64, 8}, {256, 64, 64, 4}};
  std::size_t iterations = 100;
  std::size_t warmup = 5;
};

struct RunConfig {
  pipeline::PipelineConfig pipeline;
  Preset preset = Preset::Consistent;
  std::size_t num_references = 2;
  std::string output_dir = "refdrop_out";
  oracle::Precision precision = oracle::Precision::F32;
  CheckOptions check;
  SweepOptions sweep;
  BenchOptions bench;
};

/// Parses "LxDxDV[,LxDxDV...]" (for example "1x1x1" or "8x4x4,64x32x32").
std::vector<oracle::GridCell> parse_grid(const std::string& text);

/// Builds a RunConfig from a JSON document. Unknown keys are rejected. Preset
/// defaults are applied first; explicit "policy"/"coefficient"/"coefficients"
/// keys then override them.
RunConfig resolve_config(const nlohmann::json& document);

/// Reads a JSON file (ConfigError on a missing or malformed file).
nlohmann::json load_config_file(const std::string& path);

/// Merges `overrides` into `base` recursively; values in `overrides` win.
void merge_json(nlohmann::json& base, const nlohmann::json& overrides);

/// The fully resolved configuration, in the same schema resolve_config reads.
nlohmann::json to_json(const RunConfig& config);

}  // namespace refdrop::cli
