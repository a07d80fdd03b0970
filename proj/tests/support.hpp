#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lavpr/numeric.hpp"
#include "lavpr/retrieval.hpp"

namespace lavpr::testing {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("lavpr_test_" + std::to_string(rd()) + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline MatrixD gaussian_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                               double stddev = 1.0) {
  MatrixD m(rows, cols);
  std::normal_distribution<double> nd(0.0, stddev);
  for (auto& v : m.data()) v = nd(rng);
  return m;
}

inline MatrixD unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  MatrixD m = gaussian_matrix(rng, rows, cols);
  l2_normalize_rows(m);
  return m;
}

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Straight-line brute force: score every row, full stable sort, truncate.
inline std::vector<std::size_t> oracle_order(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

inline std::vector<double> oracle_cosines(const Matrix& rows, const std::vector<double>& query) {
  double n = 0.0;
  for (double x : query) n += x * x;
  n = std::sqrt(n);
  std::vector<double> q(query.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = n > kNormEps ? query[i] / n : 0.0;
  std::vector<double> s(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < rows.cols(); ++c) acc += static_cast<double>(rows(r, c)) * q[c];
    s[r] = acc;
  }
  return s;
}

inline std::vector<std::size_t> rows_of(const Ranking& r) {
  std::vector<std::size_t> out;
  for (const auto& h : r) out.push_back(h.row);
  return out;
}

inline std::vector<RecordMeta> make_records(std::size_t n, std::size_t per_place = 1) {
  std::vector<RecordMeta> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"r" + std::to_string(i), "p" + std::to_string(i / per_place),
                   Modality::kVision, Split::kDatabase});
  }
  return out;
}

}  // namespace lavpr::testing
