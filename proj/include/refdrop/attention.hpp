#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "refdrop/matrix.hpp"

// Attention kernels. Every kernel takes activations of element type T (float
// or double), evaluates softmax, value sums and branch blends in widened_t<T>,
// and rounds to T once on output. Per-entry blend coefficients (the rank-1
// matrix C) are carried in widened_t<T>; user scalars are double.
//
// Shapes: queries [L x d], keys [M x d], values [M x d_v]; outputs [L x d_v].
// The logit scale is 1/sqrt(d) with d = queries.cols().

namespace refdrop {

/// Per-query-row share of the softmax mass that falls on the reference keys
/// when reference and self keys are attended jointly. Entries lie strictly
/// inside (0, 1).
template <typename W>
struct CoefficientVector {
  std::vector<W> values;
};

template <typename T>
struct KeyValue {
  Matrix<T> keys;
  Matrix<T> values;
};

/// Keys and values of one reference sample at one denoising step, one entry
/// per attention layer. Written once per step, then shared read-only.
template <typename T>
struct ReferenceKV {
  std::vector<KeyValue<T>> layers;

  std::size_t bytes() const;
};

template <typename T>
struct WeightedReference {
  std::reference_wrapper<const Matrix<T>> keys;
  std::reference_wrapper<const Matrix<T>> values;
  double coefficient;
};

namespace policy {
struct Plain {};
struct Concat {};
struct CrossFrame {};
struct Rfg {
  double coefficient;
};
struct RfgMulti {
  std::vector<double> coefficients;
};
struct RfgRank1 {};
}  // namespace policy

using AttentionPolicy = std::variant<policy::Plain, policy::Concat, policy::CrossFrame,
                                     policy::Rfg, policy::RfgMulti, policy::RfgRank1>;

std::string policy_name(const AttentionPolicy& p);

/// Number of reference samples the policy reads (0 for Plain).
std::size_t reference_count(const AttentionPolicy& p);

/// Emits warnings for coefficients outside [-1, 1] (and for a multi-reference
/// coefficient sum above 1 in magnitude). Never throws on the coefficient value.
void check_coefficients(const AttentionPolicy& p);

template <typename T>
Matrix<T> project(const Matrix<T>& x, const Matrix<T>& weight);

/// softmax(Q K^T / sqrt(d)) V
template <typename T>
Matrix<T> attention(const Matrix<T>& queries, const Matrix<T>& keys, const Matrix<T>& values);

/// Attention over the row-stacked keys [K_ref; K_self] and values [V_ref; V_self].
template <typename T>
Matrix<T> concat_attention(const Matrix<T>& queries, const Matrix<T>& ref_keys,
                           const Matrix<T>& ref_values, const Matrix<T>& self_keys,
                           const Matrix<T>& self_values);

/// c * A_ref + (1 - c) * A_self, evaluated as A_self + c * (A_ref - A_self).
/// c == 0 returns A_self and c == 1 returns A_ref bitwise.
template <typename T>
Matrix<T> rfg_attention(const Matrix<T>& queries, const Matrix<T>& ref_keys,
                        const Matrix<T>& ref_values, const Matrix<T>& self_keys,
                        const Matrix<T>& self_values, double c);

/// sum_j c_j * A_j + (1 - sum_j c_j) * A_self
template <typename T>
Matrix<T> rfg_multi(const Matrix<T>& queries, std::span<const WeightedReference<T>> refs,
                    const Matrix<T>& self_keys, const Matrix<T>& self_values);

template <typename T>
CoefficientVector<widened_t<T>> concat_coefficient_vector(const Matrix<T>& queries,
                                                          const Matrix<T>& ref_keys,
                                                          const Matrix<T>& self_keys);

/// C[l][k] = c[l] for every column k.
template <typename W>
Matrix<W> build_rank1_coefficient(const CoefficientVector<W>& c, std::size_t value_dim);

/// C .* A_ref + (1 - C) .* A_self
template <typename T>
Matrix<T> rfg_matrix(const Matrix<T>& queries, const Matrix<T>& ref_keys,
                     const Matrix<T>& ref_values, const Matrix<T>& self_keys,
                     const Matrix<T>& self_values, const Matrix<widened_t<T>>& coefficient);

/// A_self + C .* (A_ref - A_self)
template <typename T>
Matrix<T> guidance_form(const Matrix<T>& queries, const Matrix<T>& ref_keys,
                        const Matrix<T>& ref_values, const Matrix<T>& self_keys,
                        const Matrix<T>& self_values, const Matrix<widened_t<T>>& coefficient);

/// Dispatches one sample's attention at `layer` according to `p`. `refs` holds
/// one cache per reference sample (RfgMulti reads refs[0..N), the others read
/// refs[0]). `coefficient_override` replaces the scalar of an Rfg policy.
/// Throws std::out_of_range when a non-Plain policy finds no cache entry.
template <typename T>
Matrix<T> apply_policy(const Matrix<T>& queries, const Matrix<T>& keys, const Matrix<T>& values,
                       const AttentionPolicy& p, std::span<const ReferenceKV<T>> refs,
                       std::size_t layer, std::optional<double> coefficient_override = {});

}  // namespace refdrop
