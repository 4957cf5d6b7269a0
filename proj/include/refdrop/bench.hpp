#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "refdrop/oracle.hpp"

namespace refdrop::bench {

struct BenchCell {
  std::size_t seq_len;
  std::size_t key_dim;
  std::size_t value_dim;
  std::size_t batch;

  bool operator==(const BenchCell&) const = default;
};

struct CellResult {
  std::string policy;
  BenchCell cell;
  std::size_t iterations = 0;
  double median_seconds = 0.0;
  // Per-sample attention evaluations per second (batch / median_seconds).
  double calls_per_second = 0.0;
  // Bytes of the reference sample's K/V read by the other batch members
  // instead of being recomputed: (B - 1) * (L*d + L*d_v) * sizeof(element).
  std::size_t cache_reuse_bytes = 0;
};

struct BenchReport {
  std::string precision;
  std::string build_id;
  std::size_t iterations = 0;
  std::size_t warmup = 0;
  std::vector<CellResult> cells;
};

/// Identifies the library version, compiler and build flavour.
std::string build_id();

/// Times one batch step per iteration for plain, concat and rfg attention:
/// sample 0 runs plain attention and its K/V is shared with samples 1..B-1.
BenchReport run_bench(const std::vector<BenchCell>& grid, std::size_t iterations,
                      std::size_t warmup, oracle::Precision precision, std::uint64_t seed);

nlohmann::json to_json(const BenchReport& report);

}  // namespace refdrop::bench
