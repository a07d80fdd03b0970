#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lavpr/numeric.hpp"

namespace lavpr {

struct MsConfig {
  double alpha = 1.0;
  double beta = 50.0;
  double lambda = 0.0;  // margin
  // Hard-pair mining from the original multi-similarity method. Off by
  // default: every masked pair contributes.
  bool mine_pairs = false;
  double mining_epsilon = 0.1;

  void validate() const;

  /// alpha=1, beta=50, margin=0 (multi-modal fusion heads).
  static MsConfig fusion_defaults() { return {1.0, 50.0, 0.0}; }
  /// alpha=2, beta=40, margin=0.5 (cross-modal LoRA alignment).
  static MsConfig crossmodal_defaults() { return {2.0, 40.0, 0.5}; }
};

/// Positive / negative pair masks over a query x reference batch.
struct BatchMasks {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pos;
  std::vector<std::uint8_t> neg;

  bool is_pos(std::size_t q, std::size_t r) const { return pos[q * cols + r] != 0; }
  bool is_neg(std::size_t q, std::size_t r) const { return neg[q * cols + r] != 0; }
};

/// Square masks within one batch: positive iff same place and different
/// index, negative iff different place. Self pairs are in neither.
BatchMasks build_batch_masks(std::span<const std::string> place_ids);

/// Masks between two different batches (e.g. text anchors vs image
/// references); no self exclusion since index i in both is a true pair.
BatchMasks build_cross_masks(std::span<const std::string> query_places,
                             std::span<const std::string> reference_places);

struct LossResult {
  double loss = 0.0;
  MatrixD grad;  // dLoss/dS, same shape as S
};

/// Multi-similarity loss averaged over query rows. Empty positive or negative
/// sets contribute nothing to their term. Gradient is zero on masked-out
/// entries. Throws kNonFinite for NaN/Inf similarities.
LossResult ms_loss(const MatrixD& sims, const BatchMasks& masks, const MsConfig& cfg);

inline constexpr double kDefaultTemperature = 0.07;

/// Symmetric InfoNCE: mean of query->reference and reference->query cross
/// entropies over sims/temperature. `positive_index[q]` is the positive
/// column of row q and must be a permutation (sims is square).
LossResult contrastive_loss(const MatrixD& sims, std::span<const std::size_t> positive_index,
                            double temperature = kDefaultTemperature);

}  // namespace lavpr
