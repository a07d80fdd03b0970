#include "lavpr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lavpr {

void MsConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "ms loss: alpha and beta must be positive");
  }
  if (!std::isfinite(lambda)) throw Error(ErrorCode::kInvalidArgument, "ms loss: bad margin");
}

BatchMasks build_batch_masks(std::span<const std::string> place_ids) {
  const std::size_t n = place_ids.size();
  BatchMasks m{n, n, std::vector<std::uint8_t>(n * n, 0), std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (place_ids[i] == place_ids[j]) {
        m.pos[i * n + j] = 1;
      } else {
        m.neg[i * n + j] = 1;
      }
    }
  }
  return m;
}

BatchMasks build_cross_masks(std::span<const std::string> query_places,
                             std::span<const std::string> reference_places) {
  const std::size_t n = query_places.size();
  const std::size_t k = reference_places.size();
  BatchMasks m{n, k, std::vector<std::uint8_t>(n * k, 0), std::vector<std::uint8_t>(n * k, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      (query_places[i] == reference_places[j] ? m.pos : m.neg)[i * k + j] = 1;
    }
  }
  return m;
}

namespace {

// Adds (1/scale) * log(1 + sum_i exp(scale * sign * (s_i - margin))) to the
// loss and its gradient (already divided by the batch size) to `grad`.
double soft_term(const MatrixD& sims, std::size_t q, const std::vector<std::size_t>& cols,
                 double scale, double sign, double margin, double inv_batch, MatrixD& grad) {
  if (cols.empty()) return 0.0;
  std::vector<double> z(cols.size());
  double mx = 0.0;  // the implicit "1" is exp(0)
  for (std::size_t k = 0; k < cols.size(); ++k) {
    z[k] = scale * sign * (sims(q, cols[k]) - margin);
    mx = std::max(mx, z[k]);
  }
  double sum = std::exp(-mx);
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const double p = std::exp(z[k] - lse);
    grad(q, cols[k]) += inv_batch * sign * p;
  }
  return lse / scale;
}

// Log-softmax of `z` at index t, writing the probabilities into `p`.
double log_softmax_at(const std::vector<double>& z, std::size_t t, std::vector<double>& p) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  p.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] - lse);
  return z[t] - lse;
}

}  // namespace

LossResult ms_loss(const MatrixD& sims, const BatchMasks& masks, const MsConfig& cfg) {
  cfg.validate();
  if (sims.rows() != masks.rows || sims.cols() != masks.cols) {
    throw Error(ErrorCode::kDimensionMismatch, "ms_loss: mask shape does not match similarities");
  }
  if (!all_finite(sims.data())) throw Error(ErrorCode::kNonFinite, "ms_loss: non-finite similarity");
  LossResult out{0.0, MatrixD(sims.rows(), sims.cols())};
  if (sims.rows() == 0) return out;
  const double inv_batch = 1.0 / static_cast<double>(sims.rows());

  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  double total = 0.0;
  for (std::size_t q = 0; q < sims.rows(); ++q) {
    pos.clear();
    neg.clear();
    for (std::size_t r = 0; r < sims.cols(); ++r) {
      if (masks.is_pos(q, r)) pos.push_back(r);
      if (masks.is_neg(q, r)) neg.push_back(r);
    }
    if (cfg.mine_pairs && !pos.empty() && !neg.empty()) {
      double min_pos = std::numeric_limits<double>::infinity();
      double max_neg = -std::numeric_limits<double>::infinity();
      for (auto r : pos) min_pos = std::min(min_pos, sims(q, r));
      for (auto r : neg) max_neg = std::max(max_neg, sims(q, r));
      std::erase_if(pos, [&](std::size_t r) { return !(sims(q, r) - cfg.mining_epsilon < max_neg); });
      std::erase_if(neg, [&](std::size_t r) { return !(sims(q, r) + cfg.mining_epsilon > min_pos); });
    }
    total += soft_term(sims, q, pos, cfg.alpha, -1.0, cfg.lambda, inv_batch, out.grad);
    total += soft_term(sims, q, neg, cfg.beta, 1.0, cfg.lambda, inv_batch, out.grad);
  }
  out.loss = total * inv_batch;
  return out;
}

LossResult contrastive_loss(const MatrixD& sims, std::span<const std::size_t> positive_index,
                            double temperature) {
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "contrastive_loss: temperature must be > 0");
  }
  const std::size_t n = sims.rows();
  if (sims.cols() != n || positive_index.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch,
                "contrastive_loss: needs a square matrix and one positive per row");
  }
  if (!all_finite(sims.data())) {
    throw Error(ErrorCode::kNonFinite, "contrastive_loss: non-finite similarity");
  }
  std::vector<std::size_t> owner(n, n);
  for (std::size_t q = 0; q < n; ++q) {
    const auto p = positive_index[q];
    if (p >= n || owner[p] != n) {
      throw Error(ErrorCode::kInvalidArgument, "contrastive_loss: positives must form a permutation");
    }
    owner[p] = q;
  }
  LossResult out{0.0, MatrixD(n, n)};
  if (n == 0) return out;
  const double w = 0.5 / static_cast<double>(n);
  std::vector<double> logits(n);
  std::vector<double> p;

  // query -> reference (rows)
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t r = 0; r < n; ++r) logits[r] = sims(q, r) / temperature;
    const auto t = positive_index[q];
    out.loss += -w * log_softmax_at(logits, t, p);
    for (std::size_t r = 0; r < n; ++r) {
      out.grad(q, r) += w * (p[r] - (r == t ? 1.0 : 0.0)) / temperature;
    }
  }
  // reference -> query (columns)
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t q = 0; q < n; ++q) logits[q] = sims(q, r) / temperature;
    const auto t = owner[r];
    out.loss += -w * log_softmax_at(logits, t, p);
    for (std::size_t q = 0; q < n; ++q) {
      out.grad(q, r) += w * (p[q] - (q == t ? 1.0 : 0.0)) / temperature;
    }
  }
  return out;
}

}  // namespace lavpr
