#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace refdrop {

/// Raised when operand shapes are incompatible; the message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix with at least one row and one column.
///
/// Entries are required to be finite on construction from data. Operations in
/// this header keep them finite for finite inputs.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data);

  static Matrix identity(std::size_t n);
  static Matrix filled(std::size_t rows, std::size_t cols, T value);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<T> data_;
};

std::string shape_string(std::size_t rows, std::size_t cols);

template <typename T>
std::string shape_of(const Matrix<T>& m) {
  return shape_string(m.rows(), m.cols());
}

/// Accumulator for sums inside the matrix operations: at least double.
template <typename T>
using accumulator_t = std::common_type_t<T, double>;

/// One precision level above T (float -> double, double -> long double). The
/// attention kernels evaluate intermediates and blend coefficients in this type
/// so that the single rounding to T on output dominates the error.
template <typename T>
struct widened {
  using type = double;
};
template <>
struct widened<double> {
  using type = long double;
};
template <>
struct widened<long double> {
  using type = long double;
};
template <typename T>
using widened_t = typename widened<T>::type;

/// Element-type conversion (rounds to nearest when narrowing).
template <typename To, typename From>
Matrix<To> cast(const Matrix<From>& m) {
  std::vector<To> out(m.size());
  auto src = m.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
  return Matrix<To>(m.rows(), m.cols(), std::move(out));
}

// Products accumulate in accumulator_t<T> and sum the inner index in ascending
// order, so results are identical run to run.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);

/// a * b^T without materializing the transpose.
template <typename T>
Matrix<T> matmul_transposed(const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
Matrix<T> transpose(const Matrix<T>& a);

template <typename T>
Matrix<T> scale(const Matrix<T>& a, T factor);

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
Matrix<T> subtract(const Matrix<T>& a, const Matrix<T>& b);

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b);

/// exp(row - rowmax) normalized per row.
template <typename T>
Matrix<T> row_softmax(const Matrix<T>& a);

template <typename T>
double frobenius_norm(const Matrix<T>& a);

/// Rows of `top` followed by rows of `bottom`.
template <typename T>
Matrix<T> stack_rows(const Matrix<T>& top, const Matrix<T>& bottom);

/// 64-bit FNV-1a over the raw bytes of the entries, used for regression digests.
template <typename T>
std::uint64_t digest(const Matrix<T>& m);

}  // namespace refdrop
