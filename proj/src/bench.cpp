#include "refdrop/bench.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "refdrop/attention.hpp"
#include "refdrop/random.hpp"

#ifndef REFDROP_VERSION
#define REFDROP_VERSION "0.0.0"
#endif

namespace refdrop::bench {

namespace {

constexpr double kRfgBenchCoefficient = 0.35;

template <typename T>
struct SampleInputs {
  Matrix<T> q, k, v;
};

template <typename T>
std::vector<SampleInputs<T>> draw_batch(const BenchCell& cell, std::uint64_t seed) {
  std::vector<SampleInputs<T>> batch;
  for (std::size_t i = 0; i < cell.batch; ++i) {
    Xoshiro256 rng(derive_seed(seed, i));
    Matrix<T> q = random_matrix<T>(rng, cell.seq_len, cell.key_dim);
    Matrix<T> k = random_matrix<T>(rng, cell.seq_len, cell.key_dim);
    Matrix<T> v = random_matrix<T>(rng, cell.seq_len, cell.value_dim);
    batch.push_back({std::move(q), std::move(k), std::move(v)});
  }
  return batch;
}

// One batch step; returns a checksum so the work cannot be elided.
template <typename T>
double batch_step(const std::string& policy, const std::vector<SampleInputs<T>>& batch) {
  const auto& ref = batch.front();
  double sink = attention(ref.q, ref.k, ref.v)(0, 0);
  for (std::size_t i = 1; i < batch.size(); ++i) {
    const auto& s = batch[i];
    if (policy == "plain") {
      sink += attention(s.q, s.k, s.v)(0, 0);
    } else if (policy == "concat") {
      sink += concat_attention(s.q, ref.k, ref.v, s.k, s.v)(0, 0);
    } else {
      sink += rfg_attention(s.q, ref.k, ref.v, s.k, s.v, kRfgBenchCoefficient)(0, 0);
    }
  }
  return sink;
}

template <typename T>
CellResult time_cell(const std::string& policy, const BenchCell& cell, std::size_t iterations,
                     std::size_t warmup, std::uint64_t seed) {
  const auto batch = draw_batch<T>(cell, seed);
  volatile double sink = 0.0;
  for (std::size_t i = 0; i < warmup; ++i) sink = sink + batch_step(policy, batch);
  std::vector<double> seconds;
  seconds.reserve(iterations);
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto start = std::chrono::steady_clock::now();
    sink = sink + batch_step(policy, batch);
    const auto stop = std::chrono::steady_clock::now();
    seconds.push_back(std::chrono::duration<double>(stop - start).count());
  }
  std::sort(seconds.begin(), seconds.end());
  const std::size_t n = seconds.size();
  const double median = n % 2 ? seconds[n / 2] : 0.5 * (seconds[n / 2 - 1] + seconds[n / 2]);

  CellResult r;
  r.policy = policy;
  r.cell = cell;
  r.iterations = iterations;
  r.median_seconds = median;
  r.calls_per_second = static_cast<double>(cell.batch) / median;
  if (policy != "plain") {
    const std::size_t per_sample =
        (cell.seq_len * cell.key_dim + cell.seq_len * cell.value_dim) * sizeof(T);
    r.cache_reuse_bytes = (cell.batch - 1) * per_sample;
  }
  return r;
}

}  // namespace

std::string build_id() {
  std::string id = std::string("refdrop ") + REFDROP_VERSION;
#if defined(__clang__)
  id += " clang " __clang_version__;
#elif defined(__GNUC__)
  id += " gcc " __VERSION__;
#endif
#ifdef NDEBUG
  id += " release";
#else
  id += " debug";
#endif
  return id;
}

BenchReport run_bench(const std::vector<BenchCell>& grid, std::size_t iterations,
                      std::size_t warmup, oracle::Precision precision, std::uint64_t seed) {
  if (grid.empty()) throw std::invalid_argument("bench grid is empty");
  if (iterations == 0) throw std::invalid_argument("bench needs at least one iteration");
  BenchReport report;
  report.precision = oracle::precision_name(precision);
  report.build_id = build_id();
  report.iterations = iterations;
  report.warmup = warmup;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    const BenchCell& cell = grid[c];
    if (cell.batch < 2) throw std::invalid_argument("bench cells need B >= 2");
    for (const char* policy : {"plain", "concat", "rfg"}) {
      const std::uint64_t cell_seed = derive_seed(seed, c);
      report.cells.push_back(precision == oracle::Precision::F32
                                 ? time_cell<float>(policy, cell, iterations, warmup, cell_seed)
                                 : time_cell<double>(policy, cell, iterations, warmup, cell_seed));
    }
  }
  return report;
}

nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"policy", c.policy},
                     {"L", c.cell.seq_len},
                     {"d", c.cell.key_dim},
                     {"d_v", c.cell.value_dim},
                     {"B", c.cell.batch},
                     {"iterations", c.iterations},
                     {"median_seconds", c.median_seconds},
                     {"calls_per_second", c.calls_per_second},
                     {"cache_reuse_bytes", c.cache_reuse_bytes}});
  }
  return {{"precision", r.precision},
          {"build_id", r.build_id},
          {"iterations", r.iterations},
          {"warmup", r.warmup},
          {"cells", cells}};
}

}  // namespace refdrop::bench
