#include "refdrop/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "refdrop/diagnostics.hpp"

namespace refdrop {

namespace {

template <typename W, typename T>
Matrix<W> widen(const Matrix<T>& m) {
  if constexpr (std::is_same_v<T, W>) {
    return m;
  } else {
    return cast<W>(m);
  }
}

template <typename T, typename W>
Matrix<T> narrow(const Matrix<W>& m) {
  if constexpr (std::is_same_v<T, W>) {
    return m;
  } else {
    return cast<T>(m);
  }
}

template <typename T>
void check_attention_shapes(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                            const char* what) {
  if (q.cols() != k.cols()) {
    throw ShapeError(std::string(what) + ": query/key widths differ, " + shape_of(q) + " vs " +
                     shape_of(k));
  }
  if (k.rows() != v.rows()) {
    throw ShapeError(std::string(what) + ": key/value row counts differ, " + shape_of(k) +
                     " vs " + shape_of(v));
  }
}

template <typename T>
void check_pair_shapes(const Matrix<T>& q, const Matrix<T>& kr, const Matrix<T>& vr,
                       const Matrix<T>& ks, const Matrix<T>& vs, const char* what) {
  check_attention_shapes(q, kr, vr, what);
  check_attention_shapes(q, ks, vs, what);
  if (vr.cols() != vs.cols()) {
    throw ShapeError(std::string(what) + ": reference/self value widths differ, " + shape_of(vr) +
                     " vs " + shape_of(vs));
  }
}

template <typename W>
void check_coefficient_shape(const Matrix<W>& c, std::size_t rows, std::size_t cols,
                             const char* what) {
  if (c.rows() != rows || c.cols() != cols) {
    throw ShapeError(std::string(what) + ": coefficient shape " + shape_of(c) +
                     " does not match output " + shape_string(rows, cols));
  }
}

void warn_if_outside_unit(double c, const char* what) {
  if (std::abs(c) > 1.0) {
    std::ostringstream os;
    os << what << ": coefficient " << c << " lies outside [-1, 1]";
    warn(os.str());
  }
}

// Q K^T / sqrt(d)
template <typename W>
Matrix<W> scaled_logits(const Matrix<W>& q, const Matrix<W>& k) {
  return scale(matmul_transposed(q, k), W{1} / std::sqrt(static_cast<W>(q.cols())));
}

template <typename T, typename W = widened_t<T>>
Matrix<W> attend(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v) {
  const Matrix<W> qw = widen<W>(q);
  return matmul(row_softmax(scaled_logits(qw, widen<W>(k))), widen<W>(v));
}

}  // namespace

template <typename T>
std::size_t ReferenceKV<T>::bytes() const {
  std::size_t n = 0;
  for (const auto& kv : layers) n += (kv.keys.size() + kv.values.size()) * sizeof(T);
  return n;
}

std::string policy_name(const AttentionPolicy& p) {
  struct Visitor {
    std::string operator()(const policy::Plain&) const { return "plain"; }
    std::string operator()(const policy::Concat&) const { return "concat"; }
    std::string operator()(const policy::CrossFrame&) const { return "cross_frame"; }
    std::string operator()(const policy::Rfg&) const { return "rfg"; }
    std::string operator()(const policy::RfgMulti&) const { return "rfg_multi"; }
    std::string operator()(const policy::RfgRank1&) const { return "rfg_rank1"; }
  };
  return std::visit(Visitor{}, p);
}

std::size_t reference_count(const AttentionPolicy& p) {
  if (std::holds_alternative<policy::Plain>(p)) return 0;
  if (const auto* m = std::get_if<policy::RfgMulti>(&p)) return m->coefficients.size();
  return 1;
}

void check_coefficients(const AttentionPolicy& p) {
  if (const auto* r = std::get_if<policy::Rfg>(&p)) {
    warn_if_outside_unit(r->coefficient, "rfg");
  } else if (const auto* m = std::get_if<policy::RfgMulti>(&p)) {
    double total = 0.0;
    for (double c : m->coefficients) {
      warn_if_outside_unit(c, "rfg_multi");
      total += std::abs(c);
    }
    if (total > 1.0) {
      std::ostringstream os;
      os << "rfg_multi: sum of |c_j| is " << total << ", above 1";
      warn(os.str());
    }
  }
}

template <typename T>
Matrix<T> project(const Matrix<T>& x, const Matrix<T>& weight) {
  return matmul(x, weight);
}

template <typename T>
Matrix<T> attention(const Matrix<T>& queries, const Matrix<T>& keys, const Matrix<T>& values) {
  check_attention_shapes(queries, keys, values, "attention");
  return narrow<T>(attend(queries, keys, values));
}

template <typename T>
Matrix<T> concat_attention(const Matrix<T>& queries, const Matrix<T>& ref_keys,
                           const Matrix<T>& ref_values, const Matrix<T>& self_keys,
                           const Matrix<T>& self_values) {
  check_pair_shapes(queries, ref_keys, ref_values, self_keys, self_values, "concat_attention");
  return narrow<T>(attend(queries, stack_rows(ref_keys, self_keys),
                          stack_rows(ref_values, self_values)));
}

template <typename T>
Matrix<T> rfg_attention(const Matrix<T>& queries, const Matrix<T>& ref_keys,
                        const Matrix<T>& ref_values, const Matrix<T>& self_keys,
                        const Matrix<T>& self_values, double c) {
  check_pair_shapes(queries, ref_keys, ref_values, self_keys, self_values, "rfg_attention");
  warn_if_outside_unit(c, "rfg_attention");
  if (c == 0.0) return narrow<T>(attend(queries, self_keys, self_values));
  if (c == 1.0) return narrow<T>(attend(queries, ref_keys, ref_values));
  using W = widened_t<T>;
  const Matrix<W> a_ref = attend(queries, ref_keys, ref_values);
  Matrix<W> out = attend(queries, self_keys, self_values);
  const W cw = c;
  auto r = a_ref.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += cw * (r[i] - o[i]);
  return narrow<T>(out);
}

template <typename T>
Matrix<T> rfg_multi(const Matrix<T>& queries, std::span<const WeightedReference<T>> refs,
                    const Matrix<T>& self_keys, const Matrix<T>& self_values) {
  if (refs.empty()) throw std::invalid_argument("rfg_multi: at least one reference is required");
  double total = 0.0;
  for (const auto& ref : refs) {
    check_pair_shapes(queries, ref.keys.get(), ref.values.get(), self_keys, self_values,
                      "rfg_multi");
    total += std::abs(ref.coefficient);
  }
  if (total > 1.0) {
    std::ostringstream os;
    os << "rfg_multi: sum of |c_j| is " << total << ", above 1";
    warn(os.str());
  }
  using W = widened_t<T>;
  const Matrix<W> a_self = attend(queries, self_keys, self_values);
  Matrix<W> out = a_self;
  auto s = a_self.values();
  auto o = out.values();
  for (const auto& ref : refs) {
    const Matrix<W> a_ref = attend(queries, ref.keys.get(), ref.values.get());
    const W cw = ref.coefficient;
    auto r = a_ref.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += cw * (r[i] - s[i]);
  }
  return narrow<T>(out);
}

template <typename T>
CoefficientVector<widened_t<T>> concat_coefficient_vector(const Matrix<T>& queries,
                                                          const Matrix<T>& ref_keys,
                                                          const Matrix<T>& self_keys) {
  if (queries.cols() != ref_keys.cols() || queries.cols() != self_keys.cols()) {
    throw ShapeError("concat_coefficient_vector: key widths " + shape_of(ref_keys) + " / " +
                     shape_of(self_keys) + " do not match queries " + shape_of(queries));
  }
  using W = widened_t<T>;
  const Matrix<W> q = widen<W>(queries);
  const Matrix<W> ref = scaled_logits(q, widen<W>(ref_keys));
  const Matrix<W> self = scaled_logits(q, widen<W>(self_keys));

  constexpr W lowest = std::numeric_limits<W>::denorm_min();
  const W highest = std::nextafter(W{1}, W{0});

  CoefficientVector<W> c;
  c.values.resize(queries.rows());
  for (std::size_t l = 0; l < queries.rows(); ++l) {
    auto rr = ref.row(l);
    auto sr = self.row(l);
    // One shift for both partitions keeps numerator and denominator consistent.
    const W shift = std::max(*std::max_element(rr.begin(), rr.end()),
                             *std::max_element(sr.begin(), sr.end()));
    W ref_mass = 0;
    for (W x : rr) ref_mass += std::exp(x - shift);
    W self_mass = 0;
    for (W x : sr) self_mass += std::exp(x - shift);
    // The exact ratio is strictly inside (0, 1); keep it there after rounding.
    c.values[l] = std::clamp(ref_mass / (ref_mass + self_mass), lowest, highest);
  }
  return c;
}

template <typename W>
Matrix<W> build_rank1_coefficient(const CoefficientVector<W>& c, std::size_t value_dim) {
  Matrix<W> out(c.values.size(), value_dim);
  for (std::size_t l = 0; l < c.values.size(); ++l) {
    auto row = out.row(l);
    std::fill(row.begin(), row.end(), c.values[l]);
  }
  return out;
}

template <typename T>
Matrix<T> rfg_matrix(const Matrix<T>& queries, const Matrix<T>& ref_keys,
                     const Matrix<T>& ref_values, const Matrix<T>& self_keys,
                     const Matrix<T>& self_values, const Matrix<widened_t<T>>& coefficient) {
  check_pair_shapes(queries, ref_keys, ref_values, self_keys, self_values, "rfg_matrix");
  check_coefficient_shape(coefficient, queries.rows(), ref_values.cols(), "rfg_matrix");
  using W = widened_t<T>;
  const Matrix<W> a_ref = attend(queries, ref_keys, ref_values);
  Matrix<W> out = attend(queries, self_keys, self_values);
  auto c = coefficient.values();
  auto r = a_ref.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c[i] * r[i] + (W{1} - c[i]) * o[i];
  return narrow<T>(out);
}

template <typename T>
Matrix<T> guidance_form(const Matrix<T>& queries, const Matrix<T>& ref_keys,
                        const Matrix<T>& ref_values, const Matrix<T>& self_keys,
                        const Matrix<T>& self_values, const Matrix<widened_t<T>>& coefficient) {
  check_pair_shapes(queries, ref_keys, ref_values, self_keys, self_values, "guidance_form");
  check_coefficient_shape(coefficient, queries.rows(), ref_values.cols(), "guidance_form");
  using W = widened_t<T>;
  const Matrix<W> a_ref = attend(queries, ref_keys, ref_values);
  Matrix<W> out = attend(queries, self_keys, self_values);
  auto c = coefficient.values();
  auto r = a_ref.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += c[i] * (r[i] - o[i]);
  return narrow<T>(out);
}

template <typename T>
Matrix<T> apply_policy(const Matrix<T>& queries, const Matrix<T>& keys, const Matrix<T>& values,
                       const AttentionPolicy& p, std::span<const ReferenceKV<T>> refs,
                       std::size_t layer, std::optional<double> coefficient_override) {
  if (std::holds_alternative<policy::Plain>(p)) return attention(queries, keys, values);

  const std::size_t needed = reference_count(p);
  if (refs.size() < needed) {
    throw std::out_of_range(policy_name(p) + ": needs " + std::to_string(needed) +
                            " reference caches, got " + std::to_string(refs.size()));
  }
  auto layer_of = [&](std::size_t j) -> const KeyValue<T>& {
    if (layer >= refs[j].layers.size()) {
      throw std::out_of_range(policy_name(p) + ": reference " + std::to_string(j) +
                              " has no cache entry for layer " + std::to_string(layer));
    }
    return refs[j].layers[layer];
  };

  struct Visitor {
    const Matrix<T>& q;
    const Matrix<T>& k;
    const Matrix<T>& v;
    decltype(layer_of)& ref;
    std::optional<double> override_c;

    Matrix<T> operator()(const policy::Plain&) const { return attention(q, k, v); }
    Matrix<T> operator()(const policy::Concat&) const {
      const auto& r = ref(0);
      return concat_attention(q, r.keys, r.values, k, v);
    }
    Matrix<T> operator()(const policy::CrossFrame&) const {
      const auto& r = ref(0);
      return rfg_attention(q, r.keys, r.values, k, v, 1.0);
    }
    Matrix<T> operator()(const policy::Rfg& rfg) const {
      const auto& r = ref(0);
      return rfg_attention(q, r.keys, r.values, k, v, override_c.value_or(rfg.coefficient));
    }
    Matrix<T> operator()(const policy::RfgMulti& multi) const {
      std::vector<WeightedReference<T>> weighted;
      weighted.reserve(multi.coefficients.size());
      for (std::size_t j = 0; j < multi.coefficients.size(); ++j) {
        const auto& r = ref(j);
        weighted.push_back({std::cref(r.keys), std::cref(r.values), multi.coefficients[j]});
      }
      return rfg_multi<T>(q, weighted, k, v);
    }
    Matrix<T> operator()(const policy::RfgRank1&) const {
      const auto& r = ref(0);
      const auto c = build_rank1_coefficient(concat_coefficient_vector(q, r.keys, k),
                                             r.values.cols());
      return rfg_matrix(q, r.keys, r.values, k, v, c);
    }
  };
  return std::visit(Visitor{queries, keys, values, layer_of, coefficient_override}, p);
}

#define REFDROP_INSTANTIATE(T)                                                                  \
  template struct ReferenceKV<T>;                                                               \
  template Matrix<T> project(const Matrix<T>&, const Matrix<T>&);                               \
  template Matrix<T> attention(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);           \
  template Matrix<T> concat_attention(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,     \
                                      const Matrix<T>&, const Matrix<T>&);                      \
  template Matrix<T> rfg_attention(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,        \
                                   const Matrix<T>&, const Matrix<T>&, double);                 \
  template Matrix<T> rfg_multi(const Matrix<T>&, std::span<const WeightedReference<T>>,         \
                               const Matrix<T>&, const Matrix<T>&);                             \
  template CoefficientVector<widened_t<T>> concat_coefficient_vector(                            \
      const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);                                    \
  template Matrix<widened_t<T>> build_rank1_coefficient(const CoefficientVector<widened_t<T>>&, \
                                                        std::size_t);                           \
  template Matrix<T> rfg_matrix(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,           \
                                const Matrix<T>&, const Matrix<T>&, const Matrix<widened_t<T>>&);     \
  template Matrix<T> guidance_form(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,        \
                                   const Matrix<T>&, const Matrix<T>&, const Matrix<widened_t<T>>&);  \
  template Matrix<T> apply_policy(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,         \
                                  const AttentionPolicy&, std::span<const ReferenceKV<T>>,      \
                                  std::size_t, std::optional<double>);

REFDROP_INSTANTIATE(float)
REFDROP_INSTANTIATE(double)

#undef REFDROP_INSTANTIATE

}  // namespace refdrop
