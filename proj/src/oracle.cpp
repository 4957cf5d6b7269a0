#include "refdrop/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "refdrop/attention.hpp"
#include "refdrop/random.hpp"

namespace refdrop::oracle {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

// All oracle arithmetic runs in extended precision and is rounded to double
// once per output entry.
using Ext = long double;

// Softmax-weighted sum of `value_rows` for one query; logits are supplied
// already scaled. Row-max shift, then a single normalization.
void weighted_rows(const std::vector<Ext>& logits,
                   const std::vector<std::span<const double>>& value_rows,
                   std::span<double> out) {
  Ext shift = logits[0];
  for (Ext x : logits) shift = std::max(shift, x);
  Ext total = 0;
  std::vector<Ext> w(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    w[j] = std::exp(logits[j] - shift);
    total += w[j];
  }
  std::vector<Ext> acc(out.size(), Ext{0});
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const Ext wj = w[j] / total;
    for (std::size_t c = 0; c < out.size(); ++c) acc[c] += wj * value_rows[j][c];
  }
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = static_cast<double>(acc[c]);
}

Ext dot_scaled(std::span<const double> a, std::span<const double> b, Ext inv_sqrt_d) {
  Ext s = 0;
  for (std::size_t p = 0; p < a.size(); ++p) s += static_cast<Ext>(a[p]) * b[p];
  return s * inv_sqrt_d;
}

}  // namespace

Matrix<double> naive_attention(const Matrix<double>& q, const Matrix<double>& k,
                               const Matrix<double>& v) {
  require(q.cols() == k.cols(), "naive_attention: query/key widths differ, " + shape_of(q) +
                                    " vs " + shape_of(k));
  require(k.rows() == v.rows(), "naive_attention: key/value rows differ, " + shape_of(k) +
                                    " vs " + shape_of(v));
  const Ext inv_sqrt_d = Ext{1} / std::sqrt(static_cast<Ext>(q.cols()));
  Matrix<double> out(q.rows(), v.cols());
  std::vector<std::span<const double>> rows;
  for (std::size_t j = 0; j < v.rows(); ++j) rows.push_back(v.row(j));
  std::vector<Ext> logits(k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < k.rows(); ++j) logits[j] = dot_scaled(q.row(i), k.row(j), inv_sqrt_d);
    weighted_rows(logits, rows, out.row(i));
  }
  return out;
}

Matrix<double> naive_concat_attention(const Matrix<double>& q, const Matrix<double>& ref_keys,
                                      const Matrix<double>& ref_values,
                                      const Matrix<double>& self_keys,
                                      const Matrix<double>& self_values) {
  require(q.cols() == ref_keys.cols() && q.cols() == self_keys.cols(),
          "naive_concat_attention: key widths differ from queries " + shape_of(q));
  require(ref_keys.rows() == ref_values.rows() && self_keys.rows() == self_values.rows(),
          "naive_concat_attention: key/value row counts differ");
  require(ref_values.cols() == self_values.cols(),
          "naive_concat_attention: value widths differ, " + shape_of(ref_values) + " vs " +
              shape_of(self_values));
  const Ext inv_sqrt_d = Ext{1} / std::sqrt(static_cast<Ext>(q.cols()));
  Matrix<double> out(q.rows(), ref_values.cols());
  std::vector<std::span<const double>> rows;
  for (std::size_t j = 0; j < ref_values.rows(); ++j) rows.push_back(ref_values.row(j));
  for (std::size_t j = 0; j < self_values.rows(); ++j) rows.push_back(self_values.row(j));
  std::vector<Ext> logits(rows.size());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::size_t j = 0;
    for (std::size_t r = 0; r < ref_keys.rows(); ++r, ++j)
      logits[j] = dot_scaled(q.row(i), ref_keys.row(r), inv_sqrt_d);
    for (std::size_t s = 0; s < self_keys.rows(); ++s, ++j)
      logits[j] = dot_scaled(q.row(i), self_keys.row(s), inv_sqrt_d);
    weighted_rows(logits, rows, out.row(i));
  }
  return out;
}

double max_rel_error(const Matrix<double>& a, const Matrix<double>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "max_rel_error: shape mismatch " + shape_of(a) + " vs " + shape_of(b));
  double worst = 0.0;
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double denom = std::max({std::abs(x[i]), std::abs(y[i]), kRelErrorFloor});
    worst = std::max(worst, std::abs(x[i] - y[i]) / denom);
  }
  return worst;
}

double max_abs_error(const Matrix<double>& a, const Matrix<double>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "max_abs_error: shape mismatch " + shape_of(a) + " vs " + shape_of(b));
  double worst = 0.0;
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  return worst;
}

std::string precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

std::vector<GridCell> default_grid() {
  std::vector<GridCell> grid;
  for (std::size_t l : {1, 2, 4, 8, 16, 64})
    for (std::size_t d : {1, 4, 32})
      for (std::size_t dv : {1, 4, 32}) grid.push_back({l, d, dv});
  return grid;
}

double default_threshold(Precision p) { return p == Precision::F32 ? 1e-5 : 1e-10; }

TrialInputs draw_trial(std::uint64_t trial_seed, const GridCell& cell, double query_scale,
                       Precision precision) {
  Xoshiro256 rng(trial_seed);
  auto draw = [&](std::size_t rows, std::size_t cols, double s) {
    Matrix<double> m = random_matrix<double>(rng, rows, cols);
    for (double& x : m.values()) {
      x *= s;
      if (precision == Precision::F32) x = static_cast<float>(x);
    }
    return m;
  };
  const std::size_t l = cell.seq_len;
  Matrix<double> q = draw(l, cell.key_dim, query_scale);
  Matrix<double> kr = draw(l, cell.key_dim, 1.0);
  Matrix<double> vr = draw(l, cell.value_dim, 1.0);
  Matrix<double> ks = draw(l, cell.key_dim, 1.0);
  Matrix<double> vs = draw(l, cell.value_dim, 1.0);
  return {std::move(q), std::move(kr), std::move(vr), std::move(ks), std::move(vs)};
}

namespace {

struct Tracker {
  IdentityResult result;

  void record(const Matrix<double>& got, const Matrix<double>& want, std::uint64_t seed,
              const GridCell& cell) {
    const double rel = max_rel_error(got, want);
    const double abs = max_abs_error(got, want);
    result.max_abs_error = std::max(result.max_abs_error, abs);
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_seed = seed;
      result.worst_cell = cell;
    }
  }
};

template <typename T>
Matrix<double> as_double(const Matrix<T>& m) {
  if constexpr (std::is_same_v<T, double>) {
    return m;
  } else {
    return cast<double>(m);
  }
}

template <typename T>
Matrix<T> as_work(const Matrix<double>& m) {
  if constexpr (std::is_same_v<T, double>) {
    return m;
  } else {
    return cast<T>(m);
  }
}

template <typename T>
void run_trial(const TrialInputs& in, std::uint64_t seed, const GridCell& cell,
               const SuiteOptions& opt, std::vector<Tracker>& trackers,
               EquivalenceReport& report) {
  const Matrix<T> q = as_work<T>(in.queries);
  const Matrix<T> kr = as_work<T>(in.ref_keys);
  const Matrix<T> vr = as_work<T>(in.ref_values);
  const Matrix<T> ks = as_work<T>(in.self_keys);
  const Matrix<T> vs = as_work<T>(in.self_values);

  const Matrix<double> oracle_concat = naive_concat_attention(
      in.queries, in.ref_keys, in.ref_values, in.self_keys, in.self_values);

  using W = widened_t<T>;
  const CoefficientVector<W> c = concat_coefficient_vector(q, kr, ks);
  for (W x : c.values) {
    if (!(x > 0 && x < 1)) ++report.coefficient_out_of_range;
    const W margin = std::min(x, W{1} - x);
    report.coefficient_margin =
        std::min(report.coefficient_margin, static_cast<double>(margin));
  }
  Matrix<W> rank1 = build_rank1_coefficient(c, cell.value_dim);
  rank1(0, 0) += opt.coefficient_fault;

  const Matrix<T> via_matrix = rfg_matrix(q, kr, vr, ks, vs, rank1);
  trackers[0].record(as_double(via_matrix), oracle_concat, seed, cell);
  trackers[1].record(as_double(concat_attention(q, kr, vr, ks, vs)), oracle_concat, seed, cell);
  trackers[2].record(as_double(guidance_form(q, kr, vr, ks, vs, rank1)), as_double(via_matrix),
                     seed, cell);
  trackers[3].record(as_double(rfg_attention(q, kr, vr, ks, vs, 1.0)),
                     as_double(attention(q, kr, vr)), seed, cell);

  // A coefficient in [-1, 1) tied to the trial seed.
  Xoshiro256 coef_rng(derive_seed(seed, 0xc0ef));
  const double scalar = coef_rng.uniform(-1.0, 1.0);
  const WeightedReference<T> one{std::cref(kr), std::cref(vr), scalar};
  trackers[4].record(as_double(rfg_multi<T>(q, std::span(&one, 1), ks, vs)),
                     as_double(rfg_attention(q, kr, vr, ks, vs, scalar)), seed, cell);
}

}  // namespace

EquivalenceReport run_equivalence_suite(const SuiteOptions& opt) {
  EquivalenceReport report;
  report.suite = "rank1_concat_equivalence";
  report.precision = precision_name(opt.precision);
  report.seed = opt.seed;
  report.grid = opt.grid;
  report.threshold = opt.threshold;

  std::vector<Tracker> trackers(5);
  trackers[0].result.name = "rank1_vs_concat";
  trackers[1].result.name = "concat_kernel_vs_naive";
  trackers[2].result.name = "guidance_vs_matrix";
  trackers[3].result.name = "rfg1_vs_crossframe";
  trackers[4].result.name = "multi1_vs_rfg";

  const std::size_t passes = opt.adversarial ? 2 : 1;
  for (std::size_t cell_index = 0; cell_index < opt.grid.size(); ++cell_index) {
    const GridCell& cell = opt.grid[cell_index];
    for (std::size_t pass = 0; pass < passes; ++pass) {
      const double query_scale = pass == 0 ? 1.0 : opt.adversarial_scale;
      for (std::size_t t = 0; t < opt.trials_per_cell; ++t) {
        const std::uint64_t seed =
            derive_seed(opt.seed, cell_index * passes + pass, static_cast<std::uint64_t>(t));
        const TrialInputs in = draw_trial(seed, cell, query_scale, opt.precision);
        if (opt.precision == Precision::F32) {
          run_trial<float>(in, seed, cell, opt, trackers, report);
        } else {
          run_trial<double>(in, seed, cell, opt, trackers, report);
        }
        ++report.trials;
      }
    }
  }

  for (const auto& t : trackers) {
    report.identities.push_back(t.result);
    report.max_abs_error = std::max(report.max_abs_error, t.result.max_abs_error);
    if (t.result.max_rel_error > report.max_rel_error || report.identities.size() == 1) {
      report.max_rel_error = t.result.max_rel_error;
      report.worst_seed = t.result.worst_seed;
      report.worst_cell = t.result.worst_cell;
    }
  }
  report.pass = report.trials > 0 && report.max_rel_error <= report.threshold &&
                report.coefficient_out_of_range == 0;
  return report;
}

}  // namespace refdrop::oracle
