#include "refdrop/matrix.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace refdrop {

std::string shape_string(std::size_t rows, std::size_t cols) {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

namespace {

void require_positive(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix dimensions must be positive, got " + shape_string(rows, cols));
  }
}

template <typename T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
  }
}

}  // namespace

template <typename T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  require_positive(rows, cols);
  data_.assign(rows * cols, T{0});
}

template <typename T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_positive(rows, cols);
  if (data_.size() != rows * cols) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(rows, cols));
  }
  for (T v : data_) {
    if (!std::isfinite(v)) throw std::domain_error("matrix entries must be finite");
  }
}

template <typename T>
Matrix<T> Matrix<T>::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
  return m;
}

template <typename T>
Matrix<T> Matrix<T>::filled(std::size_t rows, std::size_t cols, T value) {
  Matrix m(rows, cols);
  std::fill(m.data_.begin(), m.data_.end(), value);
  return m;
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_of(a) + " x " + shape_of(b));
  }
  Matrix<T> out(a.rows(), b.cols());
  using Acc = accumulator_t<T>;
  std::vector<Acc> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), Acc{0});
    auto arow = a.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const Acc aip = arow[p];
      auto brow = b.row(p);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aip * static_cast<Acc>(brow[j]);
    }
    auto orow = out.row(i);
    for (std::size_t j = 0; j < b.cols(); ++j) orow[j] = static_cast<T>(acc[j]);
  }
  return out;
}

template <typename T>
Matrix<T> matmul_transposed(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: column counts differ, " + shape_of(a) + " x " +
                     shape_of(b) + "^T");
  }
  using Acc = accumulator_t<T>;
  Matrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      Acc acc = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) {
        acc += static_cast<Acc>(arow[p]) * static_cast<Acc>(brow[p]);
      }
      out(i, j) = static_cast<T>(acc);
    }
  }
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T>
Matrix<T> scale(const Matrix<T>& a, T factor) {
  Matrix<T> out = a;
  for (T& v : out.values()) v *= factor;
  return out;
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "add");
  Matrix<T> out = a;
  auto src = b.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

template <typename T>
Matrix<T> subtract(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "subtract");
  Matrix<T> out = a;
  auto src = b.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return out;
}

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "hadamard");
  Matrix<T> out = a;
  auto src = b.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= src[i];
  return out;
}

template <typename T>
Matrix<T> row_softmax(const Matrix<T>& a) {
  using Acc = accumulator_t<T>;
  Matrix<T> out(a.rows(), a.cols());
  std::vector<Acc> e(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    const Acc m = *std::max_element(in.begin(), in.end());
    Acc sum = 0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      e[j] = std::exp(static_cast<Acc>(in[j]) - m);
      sum += e[j];
    }
    auto o = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = static_cast<T>(e[j] / sum);
  }
  return out;
}

template <typename T>
double frobenius_norm(const Matrix<T>& a) {
  using Acc = accumulator_t<T>;
  Acc sum = 0;
  for (T v : a.values()) sum += static_cast<Acc>(v) * static_cast<Acc>(v);
  return static_cast<double>(std::sqrt(sum));
}

template <typename T>
Matrix<T> stack_rows(const Matrix<T>& top, const Matrix<T>& bottom) {
  if (top.cols() != bottom.cols()) {
    throw ShapeError("stack_rows: column counts differ, " + shape_of(top) + " over " +
                     shape_of(bottom));
  }
  std::vector<T> data;
  data.reserve(top.size() + bottom.size());
  data.insert(data.end(), top.values().begin(), top.values().end());
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return Matrix<T>(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

template <typename T>
std::uint64_t digest(const Matrix<T>& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t dims[2] = {m.rows(), m.cols()};
  mix(reinterpret_cast<const unsigned char*>(dims), sizeof(dims));
  mix(reinterpret_cast<const unsigned char*>(m.values().data()), m.size() * sizeof(T));
  return h;
}

#define REFDROP_INSTANTIATE(T)                                            \
  template class Matrix<T>;                                               \
  template Matrix<T> matmul(const Matrix<T>&, const Matrix<T>&);          \
  template Matrix<T> matmul_transposed(const Matrix<T>&, const Matrix<T>&); \
  template Matrix<T> transpose(const Matrix<T>&);                         \
  template Matrix<T> scale(const Matrix<T>&, T);                          \
  template Matrix<T> add(const Matrix<T>&, const Matrix<T>&);             \
  template Matrix<T> subtract(const Matrix<T>&, const Matrix<T>&);        \
  template Matrix<T> hadamard(const Matrix<T>&, const Matrix<T>&);        \
  template Matrix<T> row_softmax(const Matrix<T>&);                       \
  template double frobenius_norm(const Matrix<T>&);                       \
  template Matrix<T> stack_rows(const Matrix<T>&, const Matrix<T>&);

REFDROP_INSTANTIATE(float)
REFDROP_INSTANTIATE(double)
REFDROP_INSTANTIATE(long double)

// long double carries padding bytes, so it has no digest.
template std::uint64_t digest(const Matrix<float>&);
template std::uint64_t digest(const Matrix<double>&);

#undef REFDROP_INSTANTIATE

}  // namespace refdrop
