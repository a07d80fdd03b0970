#pragma once

// Dense row-major matrices and the handful of kernels every trainable module
// shares. Storage may be 32-bit (persisted descriptors) or 64-bit (trainable
// state); reductions always accumulate in double, strictly left to right.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lavpr/error.hpp"

namespace lavpr {

template <class T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static BasicMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    BasicMatrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() ? rows.begin()->size() : 0;
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
      if (r.size() != m.cols_) {
        throw Error(ErrorCode::kDimensionMismatch, "ragged initializer rows");
      }
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

MatrixD to_double(const Matrix& m);
Matrix to_float(const MatrixD& m);

/// A trainable tensor with its gradient and SGD momentum buffer.
struct Param {
  Param() = default;
  Param(std::string param_name, MatrixD init)
      : name(std::move(param_name)),
        value(std::move(init)),
        grad(value.rows(), value.cols()),
        momentum(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  MatrixD value;
  MatrixD grad;
  MatrixD momentum;
};

bool all_finite(std::span<const float> v);
bool all_finite(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double dot(std::span<const float> a, std::span<const double> b);
double dot(std::span<const float> a, std::span<const float> b);
double norm2(std::span<const double> v);

struct Normalized {
  std::vector<double> value;
  double norm = 0.0;
  bool degenerate = false;
};

inline constexpr double kNormEps = 1e-12;

/// Unit-norm copy of `v`. Vectors with norm <= eps come back as zeros with
/// `degenerate` set. Throws kNonFinite on NaN/Inf input.
Normalized l2_normalize(std::span<const double> v, double eps = kNormEps);

/// Normalizes every row in place; returns per-row norms (0 for degenerate rows)
/// and optionally the degenerate flags.
std::vector<double> l2_normalize_rows(MatrixD& m, std::vector<bool>* degenerate = nullptr,
                                      double eps = kNormEps);

/// Gradient of y = x/|x| given dL/dy. Zero for degenerate rows (norm == 0).
void normalize_backward(std::span<const double> y, double norm, std::span<const double> dy,
                        std::span<double> dx);

/// Row-wise cosine similarities. Without `normalize`, rows must already be unit
/// norm within 1e-4 (zero rows are accepted as degenerate).
MatrixD cosine_matrix(const MatrixD& a, const MatrixD& b, bool normalize = false);

/// Numerically stable softmax (max-subtracted). Throws on empty input.
std::vector<double> softmax(std::span<const double> logits);

// Dense products. Naming follows the transposition of the operands:
//   matmul(A, B)    = A  * B
//   matmul_nt(A, B) = A  * B^T
//   matmul_tn(A, B) = A^T * B
MatrixD matmul(const MatrixD& a, const MatrixD& b);
MatrixD matmul_nt(const MatrixD& a, const MatrixD& b);
MatrixD matmul_tn(const MatrixD& a, const MatrixD& b);

/// out += a^T * b (gradient accumulation for weight matrices).
void accumulate_tn(const MatrixD& a, const MatrixD& b, MatrixD& out);

/// x * W^T + bias, with W stored as (out x in) and bias as (1 x out) or empty.
MatrixD affine(const MatrixD& x, const MatrixD& weight, const MatrixD& bias);

/// Backward of `affine`: accumulates dW, db (when non-null) and returns dX.
MatrixD affine_backward(const MatrixD& x, const MatrixD& weight, const MatrixD& dy,
                        MatrixD* dweight, MatrixD* dbias);

MatrixD hconcat(const MatrixD& a, const MatrixD& b);

void add_inplace(MatrixD& a, const MatrixD& b);
void scale_inplace(MatrixD& a, double s);
MatrixD transpose(const MatrixD& a);

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

double gelu(double x);
double gelu_grad(double x);

}  // namespace lavpr
