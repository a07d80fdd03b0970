#pragma once

// Exact cosine retrieval and Recall@K evaluation.
//
// Rankings are ordered by score descending, ties broken by ascending database
// row. Every search is brute force over a contiguous row-major float matrix.

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lavpr/fusion.hpp"
#include "lavpr/numeric.hpp"
#include "lavpr/storage.hpp"

namespace lavpr {

struct Index {
  Matrix rows;  // unit-norm rows (zero for degenerate inputs)
  std::vector<RecordMeta> records;
  std::vector<bool> degenerate;

  // Score-level fusion (ADS): per-modality unit rows and per-record weights.
  Matrix vision;
  Matrix text;
  std::vector<ModalityWeights> weights;

  std::size_t size() const { return records.size(); }
  std::size_t dim() const { return rows.cols(); }
  bool has_modalities() const { return !weights.empty(); }
};

/// Rows are l2-normalized; throws kEmptyInput for an empty set.
Index build_index(const DescriptorSet& set);
Index build_index(const MatrixD& rows, std::vector<RecordMeta> records);

/// Index for joint ADS scoring. `batch` must come from an ADS head.
Index build_joint_index(const FusedBatch& batch, std::vector<RecordMeta> records);

struct Hit {
  std::size_t row = 0;
  double score = 0.0;
  friend bool operator==(const Hit&, const Hit&) = default;
};
using Ranking = std::vector<Hit>;

/// Top-k rows of `scores` (k clamped to scores.size()).
Ranking rank_by_scores(std::span<const double> scores, std::size_t k);

/// Cosine scores of one query against every index row.
std::vector<double> score_all(const Index& index, std::span<const double> query);

/// Top-k by cosine. The query is normalized first. Throws kDimensionMismatch
/// and kInvalidArgument for k == 0.
Ranking search(const Index& index, std::span<const double> query, std::size_t k);

/// One ranking per query row; `threads` == 0 uses the hardware concurrency.
/// Results do not depend on the thread count.
std::vector<Ranking> search_batch(const Index& index, const MatrixD& queries, std::size_t k,
                                  unsigned threads = 0);

/// Joint ADS score s = w_v s_v + w_t s_t with w = (w_query + w_record) / 2.
/// Throws kMissingModality when the index was not built for joint search.
std::vector<double> joint_scores(const Index& index, std::span<const double> z_v,
                                 std::span<const double> z_t, const ModalityWeights& w_query);
Ranking joint_search_ads(const Index& index, std::span<const double> z_v,
                         std::span<const double> z_t, const ModalityWeights& w_query,
                         std::size_t k);
std::vector<Ranking> joint_search_batch(const Index& index, const FusedBatch& queries,
                                        std::size_t k, unsigned threads = 0);

/// Keeps the first `top_n` candidates of `initial` and reorders them by
/// `secondary` (indexed by database row). Candidates outside the top-N are
/// dropped for good.
Ranking sequential_rerank(const Ranking& initial, std::span<const double> secondary,
                          std::size_t top_n = 100);

/// query record id -> positive database record ids.
using GroundTruth = std::map<std::string, std::set<std::string>>;
/// query record id -> ranked database record ids.
using RankedIds = std::map<std::string, std::vector<std::string>>;

/// Ground truth for every query-split record of `modality` in the manifest:
/// declared positives when present, otherwise every database-split record of
/// the same modality at the same place.
GroundTruth ground_truth(const Manifest& manifest, Modality database_modality = Modality::kVision);

std::vector<std::string> ranked_ids(const Index& index, const Ranking& ranking);

struct RecallReport {
  std::string mechanism;
  std::size_t dim = 0;
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // parallel to ks
  std::size_t query_count = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  double at(std::size_t k) const;
};

inline const std::vector<std::size_t> kDefaultKs = {1, 5, 10, 20};

/// A query hits at K when any positive appears in its first K ranked ids.
/// Throws kEmptyQuerySet without queries and kMissingQuery when a ground
/// truth query has no ranking. `ks` must be strictly ascending and >= 1.
RecallReport recall_at_k(const RankedIds& rankings, const GroundTruth& truth,
                         std::span<const std::size_t> ks);

}  // namespace lavpr
