#include "lavpr/numeric.hpp"

#include <numbers>

namespace lavpr {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kKindMismatch: return "KindMismatch";
    case ErrorCode::kTruncated: return "Truncated";
    case ErrorCode::kBadMetadata: return "BadMetadata";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kDuplicateRecord: return "DuplicateRecord";
    case ErrorCode::kDanglingReference: return "DanglingReference";
    case ErrorCode::kNoDatabaseMembers: return "NoDatabaseMembers";
    case ErrorCode::kUnknownRecord: return "UnknownRecord";
    case ErrorCode::kInsufficientPlaces: return "InsufficientPlaces";
    case ErrorCode::kNanLoss: return "NanLoss";
    case ErrorCode::kNoPoolableTokens: return "NoPoolableTokens";
    case ErrorCode::kRankViolation: return "RankViolation";
    case ErrorCode::kSequenceTooLong: return "SequenceTooLong";
    case ErrorCode::kEmptyQuerySet: return "EmptyQuerySet";
    case ErrorCode::kMissingQuery: return "MissingQuery";
    case ErrorCode::kMissingModality: return "MissingModality";
    case ErrorCode::kInconsistentK: return "InconsistentK";
  }
  return "Unknown";
}

MatrixD to_double(const Matrix& m) {
  MatrixD out(m.rows(), m.cols());
  std::copy(m.data().begin(), m.data().end(), out.data().begin());
  return out;
}

Matrix to_float(const MatrixD& m) {
  Matrix out(m.rows(), m.cols());
  std::transform(m.data().begin(), m.data().end(), out.data().begin(),
                 [](double v) { return static_cast<float>(v); });
  return out;
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double dot(std::span<const float> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Normalized l2_normalize(std::span<const double> v, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "l2_normalize: eps must be > 0");
  if (!all_finite(v)) throw Error(ErrorCode::kNonFinite, "l2_normalize: non-finite input");
  Normalized out;
  out.value.assign(v.size(), 0.0);
  const double n = norm2(v);
  if (n <= eps) {
    out.degenerate = true;
    return out;
  }
  out.norm = n;
  for (std::size_t i = 0; i < v.size(); ++i) out.value[i] = v[i] / n;
  return out;
}

std::vector<double> l2_normalize_rows(MatrixD& m, std::vector<bool>* degenerate, double eps) {
  std::vector<double> norms(m.rows(), 0.0);
  if (degenerate) degenerate->assign(m.rows(), false);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    auto n = l2_normalize(row, eps);
    std::copy(n.value.begin(), n.value.end(), row.begin());
    norms[r] = n.norm;
    if (degenerate) (*degenerate)[r] = n.degenerate;
  }
  return norms;
}

void normalize_backward(std::span<const double> y, double norm, std::span<const double> dy,
                        std::span<double> dx) {
  if (norm == 0.0) {
    std::fill(dx.begin(), dx.end(), 0.0);
    return;
  }
  const double proj = dot(y, dy);
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = (dy[i] - y[i] * proj) / norm;
}

MatrixD cosine_matrix(const MatrixD& a, const MatrixD& b, bool normalize) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "cosine_matrix: column counts differ");
  }
  if (normalize) {
    MatrixD an = a, bn = b;
    l2_normalize_rows(an);
    l2_normalize_rows(bn);
    return matmul_nt(an, bn);
  }
  auto check = [](const MatrixD& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const double n = norm2(m.row(r));
      if (n != 0.0 && std::abs(n - 1.0) > 1e-4) {
        throw Error(ErrorCode::kInvalidArgument, "cosine_matrix: rows are not unit norm");
      }
    }
  };
  check(a);
  check(b);
  return matmul_nt(a, b);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::kEmptyInput, "softmax: empty input");
  if (!all_finite(logits)) throw Error(ErrorCode::kNonFinite, "softmax: non-finite logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

MatrixD matmul(const MatrixD& a, const MatrixD& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::kDimensionMismatch, "matmul: inner dims");
  MatrixD out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

MatrixD matmul_nt(const MatrixD& a, const MatrixD& b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::kDimensionMismatch, "matmul_nt: inner dims");
  MatrixD out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(arow, b.row(j));
  }
  return out;
}

MatrixD matmul_tn(const MatrixD& a, const MatrixD& b) {
  MatrixD out(a.cols(), b.cols());
  accumulate_tn(a, b, out);
  return out;
}

void accumulate_tn(const MatrixD& a, const MatrixD& b, MatrixD& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "accumulate_tn: shape mismatch");
  }
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto arow = a.row(r);
    auto brow = b.row(r);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ai = arow[i];
      if (ai == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += ai * brow[j];
    }
  }
}

MatrixD affine(const MatrixD& x, const MatrixD& weight, const MatrixD& bias) {
  MatrixD y = matmul_nt(x, weight);
  if (!bias.empty()) {
    if (bias.size() != weight.rows()) {
      throw Error(ErrorCode::kDimensionMismatch, "affine: bias size");
    }
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto row = y.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias.data()[j];
    }
  }
  return y;
}

MatrixD affine_backward(const MatrixD& x, const MatrixD& weight, const MatrixD& dy,
                        MatrixD* dweight, MatrixD* dbias) {
  if (dweight) accumulate_tn(dy, x, *dweight);
  if (dbias) {
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      auto row = dy.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) dbias->data()[j] += row[j];
    }
  }
  return matmul(dy, weight);
}

MatrixD hconcat(const MatrixD& a, const MatrixD& b) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::kDimensionMismatch, "hconcat: row counts");
  MatrixD out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto o = out.row(r);
    std::copy(a.row(r).begin(), a.row(r).end(), o.begin());
    std::copy(b.row(r).begin(), b.row(r).end(), o.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

void add_inplace(MatrixD& a, const MatrixD& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "add_inplace: shape mismatch");
  }
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
}

void scale_inplace(MatrixD& a, double s) {
  for (auto& v : a.data()) v *= s;
}

MatrixD transpose(const MatrixD& a) {
  MatrixD out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  }
  return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

// tanh approximation; smooth everywhere, which keeps finite-difference checks
// free of kinks inside the encoder.
double gelu(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace lavpr
