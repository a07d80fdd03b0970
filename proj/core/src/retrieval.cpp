#include "lavpr/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

namespace lavpr {

namespace {

Matrix normalized_float_rows(const MatrixD& m, std::vector<bool>* degenerate) {
  MatrixD copy = m;
  l2_normalize_rows(copy, degenerate);
  return to_float(copy);
}

void require_k(std::size_t k) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
}

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

Index build_index(const MatrixD& rows, std::vector<RecordMeta> records) {
  if (rows.rows() == 0) throw Error(ErrorCode::kEmptyInput, "cannot index an empty set");
  if (rows.rows() != records.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "index: row count does not match records");
  }
  if (!all_finite(rows.data())) throw Error(ErrorCode::kNonFinite, "index: non-finite rows");
  Index idx;
  idx.rows = normalized_float_rows(rows, &idx.degenerate);
  idx.records = std::move(records);
  return idx;
}

Index build_index(const DescriptorSet& set) {
  if (set.records.empty()) throw Error(ErrorCode::kEmptyInput, "cannot index an empty set");
  set.validate();
  return build_index(to_double(set.matrix), set.records);
}

Index build_joint_index(const FusedBatch& batch, std::vector<RecordMeta> records) {
  if (batch.mechanism != Mechanism::kAds || batch.weights.empty()) {
    throw Error(ErrorCode::kMissingModality, "joint index needs an ADS batch");
  }
  if (batch.vision.rows() != records.size() || batch.text.rows() != records.size() ||
      batch.weights.size() != records.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "joint index: row count does not match records");
  }
  for (const auto& w : batch.weights) {
    if (std::abs(w[0] + w[1] - 1.0) > 1e-5 || w[0] < 0.0 || w[1] < 0.0) {
      throw Error(ErrorCode::kInvalidArgument, "joint index: weights must be a convex pair");
    }
  }
  Index idx = build_index(hconcat(batch.vision, batch.text), std::move(records));
  idx.vision = normalized_float_rows(batch.vision, nullptr);
  idx.text = normalized_float_rows(batch.text, nullptr);
  idx.weights = batch.weights;
  return idx;
}

Ranking rank_by_scores(std::span<const double> scores, std::size_t k) {
  require_k(k);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t top = std::min(k, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    better);
  Ranking out;
  out.reserve(top);
  for (std::size_t i = 0; i < top; ++i) out.push_back({order[i], scores[order[i]]});
  return out;
}

std::vector<double> score_all(const Index& index, std::span<const double> query) {
  if (query.size() != index.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "query dim " + std::to_string(query.size()) +
                                                   " != index dim " +
                                                   std::to_string(index.dim()));
  }
  const auto q = l2_normalize(query);
  std::vector<double> scores(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) scores[r] = dot(index.rows.row(r), q.value);
  return scores;
}

Ranking search(const Index& index, std::span<const double> query, std::size_t k) {
  require_k(k);
  return rank_by_scores(score_all(index, query), k);
}

std::vector<Ranking> search_batch(const Index& index, const MatrixD& queries, std::size_t k,
                                  unsigned threads) {
  require_k(k);
  if (queries.rows() > 0 && queries.cols() != index.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "query batch dim does not match index");
  }
  std::vector<Ranking> out(queries.rows());
  parallel_for(queries.rows(), threads,
               [&](std::size_t i) { out[i] = search(index, queries.row(i), k); });
  return out;
}

std::vector<double> joint_scores(const Index& index, std::span<const double> z_v,
                                 std::span<const double> z_t, const ModalityWeights& w_query) {
  if (!index.has_modalities()) {
    throw Error(ErrorCode::kMissingModality, "index lacks per-modality matrices");
  }
  if (z_v.size() != index.vision.cols() || z_t.size() != index.text.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "joint query dims do not match index");
  }
  const auto qv = l2_normalize(z_v);
  const auto qt = l2_normalize(z_t);
  std::vector<double> scores(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    const double wv = 0.5 * (w_query[0] + index.weights[r][0]);
    const double wt = 0.5 * (w_query[1] + index.weights[r][1]);
    scores[r] = wv * dot(index.vision.row(r), qv.value) + wt * dot(index.text.row(r), qt.value);
  }
  return scores;
}

Ranking joint_search_ads(const Index& index, std::span<const double> z_v,
                         std::span<const double> z_t, const ModalityWeights& w_query,
                         std::size_t k) {
  require_k(k);
  return rank_by_scores(joint_scores(index, z_v, z_t, w_query), k);
}

std::vector<Ranking> joint_search_batch(const Index& index, const FusedBatch& queries,
                                        std::size_t k, unsigned threads) {
  require_k(k);
  if (queries.mechanism != Mechanism::kAds) {
    throw Error(ErrorCode::kMissingModality, "joint search needs ADS queries");
  }
  std::vector<Ranking> out(queries.weights.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    out[i] = joint_search_ads(index, queries.vision.row(i), queries.text.row(i),
                              queries.weights[i], k);
  });
  return out;
}

Ranking sequential_rerank(const Ranking& initial, std::span<const double> secondary,
                          std::size_t top_n) {
  require_k(top_n);
  const std::size_t n = std::min(top_n, initial.size());
  Ranking out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = initial[i].row;
    if (row >= secondary.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "rerank: candidate row outside secondary scores");
    }
    out.push_back({row, secondary[row]});
  }
  std::sort(out.begin(), out.end(), [](const Hit& a, const Hit& b) {
    return a.score > b.score || (a.score == b.score && a.row < b.row);
  });
  return out;
}

GroundTruth ground_truth(const Manifest& manifest, Modality database_modality) {
  GroundTruth truth;
  for (const auto& place : manifest.places) {
    const auto& members = database_modality == Modality::kVision ? place.vision : place.text;
    std::set<std::string> same_place;
    for (const auto& id : members) {
      auto it = place.splits.find(id);
      if (it != place.splits.end() && it->second == Split::kDatabase) same_place.insert(id);
    }
    for (const auto& [id, split] : place.splits) {
      if (split != Split::kQuery) continue;
      auto declared = place.positives.find(id);
      if (declared != place.positives.end()) {
        truth[id] = std::set<std::string>(declared->second.begin(), declared->second.end());
      } else {
        truth[id] = same_place;
      }
    }
  }
  return truth;
}

std::vector<std::string> ranked_ids(const Index& index, const Ranking& ranking) {
  std::vector<std::string> out;
  out.reserve(ranking.size());
  for (const auto& h : ranking) out.push_back(index.records.at(h.row).record_id);
  return out;
}

double RecallReport::at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return recall[i];
  }
  throw Error(ErrorCode::kInvalidArgument, "report has no R@" + std::to_string(k));
}

RecallReport recall_at_k(const RankedIds& rankings, const GroundTruth& truth,
                         std::span<const std::size_t> ks) {
  if (truth.empty()) throw Error(ErrorCode::kEmptyQuerySet, "no queries to evaluate");
  if (ks.empty()) throw Error(ErrorCode::kInvalidArgument, "empty K list");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == 0 || (i > 0 && ks[i] <= ks[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "K list must be ascending and >= 1");
    }
  }
  std::vector<std::size_t> hits(ks.size(), 0);
  for (const auto& [query, positives] : truth) {
    auto it = rankings.find(query);
    if (it == rankings.end()) {
      throw Error(ErrorCode::kMissingQuery, "query '" + query + "' has no ranking");
    }
    const auto& ranked = it->second;
    std::size_t first = ranked.size();
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (positives.count(ranked[r])) {
        first = r;
        break;
      }
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (first < ks[i]) ++hits[i];
    }
  }
  RecallReport rep;
  rep.ks.assign(ks.begin(), ks.end());
  rep.query_count = truth.size();
  for (auto h : hits) {
    rep.recall.push_back(static_cast<double>(h) / static_cast<double>(truth.size()));
  }
  return rep;
}

}  // namespace lavpr
