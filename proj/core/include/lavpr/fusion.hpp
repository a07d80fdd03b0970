#pragma once

// Late-fusion heads over frozen per-modality embeddings.
//
//   CAT  z = [z_v; z_t]                                   (no parameters)
//   PA   z = W_v z_v + b_v + W_t z_t + b_t
//   MLP  z = W_2 relu(W_1 [z_v; z_t] + b_1) + b_2
//   ADS  (w_v, w_t) = softmax(W_2 relu(W_1 [z_v; z_t] + b_1) + b_2); the pair
//        score averages both sides' weights and mixes modality cosines.
//
// Every feature output is l2-normalized before retrieval. Optionally the text
// input is replaced by learned attention pooling over token states (LLP).

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lavpr/losses.hpp"
#include "lavpr/numeric.hpp"
#include "lavpr/storage.hpp"

namespace lavpr {

enum class Mechanism { kCat, kPa, kMlp, kAds };

std::string_view to_string(Mechanism m);
Mechanism parse_mechanism(std::string_view s);

inline constexpr std::size_t kDefaultSharedDim = 1024;

struct FusionConfig {
  std::size_t d_v = 0;
  std::size_t d_t = 0;
  std::size_t d_e = kDefaultSharedDim;  // PA / MLP output dim
  Mechanism mechanism = Mechanism::kCat;
  bool use_llp = false;
  // 0 selects the defaults: MLP hidden = d_v + d_t, ADS hidden = (d_v + d_t) / 2.
  std::size_t hidden = 0;

  void validate() const;
  std::size_t hidden_width() const;
  /// Dimension of the fused descriptor; 0 for ADS (score-level fusion).
  std::size_t output_dim() const;
};

struct PaParams {
  Param w_v, b_v, w_t, b_t;
};

struct MlpParams {
  Param w1, b1, w2, b2;
};

/// Two-layer perceptron producing the two modality logits.
struct AdsParams {
  Param w1, b1, w2, b2;
};

struct LlpParams {
  Param score_w;  // 1 x token_dim
  Param score_b;  // 1 x 1
  Param out_w;    // token_dim x 2*token_dim
  Param out_b;    // 1 x token_dim
};

using ModalityWeights = std::array<double, 2>;  // (w_v, w_t)

// Single-sample forms. Inputs are expected to be l2-normalized.
Normalized fuse_cat(std::span<const double> z_v, std::span<const double> z_t);
Normalized fuse_pa(std::span<const double> z_v, std::span<const double> z_t, const PaParams& p);
Normalized fuse_mlp(std::span<const double> z_v, std::span<const double> z_t, const MlpParams& p);
ModalityWeights ads_weights(std::span<const double> z_v, std::span<const double> z_t,
                            const AdsParams& p);

/// w_ij = (w_i + w_j) / 2 per modality; returns w_v_ij * s_v + w_t_ij * s_t.
/// Throws kInvalidArgument when either weight pair does not sum to 1 (1e-5).
double ads_joint_similarity(const ModalityWeights& w_i, const ModalityWeights& w_j, double s_v,
                            double s_t);

/// Attention pooling over non-CLS tokens, concatenated with CLS, then
/// tanh(Linear(.)) and l2 normalization. Row 0 of `tokens` is CLS.
/// Throws kNoPoolableTokens for a CLS-only sequence.
Normalized llp_pool(const MatrixD& tokens, const LlpParams& p);

/// Batch input to a head: row i of `vision` / `text` (and tokens[i]) describe
/// the same record. Rows are l2-normalized.
struct FusionInputs {
  MatrixD vision;
  MatrixD text;
  std::vector<MatrixD> tokens;  // required when use_llp
};

/// Output of a head over a batch.
struct FusedBatch {
  Mechanism mechanism = Mechanism::kCat;
  MatrixD embedding;  // CAT/PA/MLP: normalized fused rows
  MatrixD vision;     // ADS: normalized modality rows
  MatrixD text;
  std::vector<ModalityWeights> weights;  // ADS
  std::vector<bool> degenerate;          // feature heads
};

class FusionHead {
 public:
  /// Parameters are drawn from N(0, 1/fan_in) with zero biases; the ADS
  /// output layer starts at zero so every record begins at weights (0.5, 0.5).
  FusionHead(const FusionConfig& cfg, std::uint64_t seed);

  const FusionConfig& config() const { return cfg_; }
  bool parameter_free() const { return !pa_ && !mlp_ && !ads_ && !llp_; }
  std::vector<Param*> params();
  std::size_t parameter_count() const;

  /// Replaces every parameter with fresh N(0, scale^2 / fan_in) draws,
  /// including biases and the ADS output layer (used by gradient checks).
  void randomize(std::uint64_t seed, double scale = 1.0);

  FusedBatch forward(const FusionInputs& in) const;

  /// Scores between two fused batches (cosine for feature heads, joint ADS
  /// score otherwise): queries x references.
  static MatrixD similarity(const FusedBatch& queries, const FusedBatch& references);

  /// MS loss over the batch's own similarity matrix (self pairs excluded).
  /// Overwrites every Param::grad with dLoss/dParam.
  double loss_and_grad(const FusionInputs& batch, std::span<const std::string> place_ids,
                       const MsConfig& ms);

  TensorBundle to_bundle() const;
  static FusionHead from_bundle(const TensorBundle& bundle);

  const PaParams* pa() const { return pa_ ? &*pa_ : nullptr; }
  const MlpParams* mlp() const { return mlp_ ? &*mlp_ : nullptr; }
  const AdsParams* ads() const { return ads_ ? &*ads_ : nullptr; }
  const LlpParams* llp() const { return llp_ ? &*llp_ : nullptr; }
  PaParams* pa() { return pa_ ? &*pa_ : nullptr; }
  MlpParams* mlp() { return mlp_ ? &*mlp_ : nullptr; }
  AdsParams* ads() { return ads_ ? &*ads_ : nullptr; }
  LlpParams* llp() { return llp_ ? &*llp_ : nullptr; }

 private:
  FusionConfig cfg_;
  std::optional<PaParams> pa_;
  std::optional<MlpParams> mlp_;
  std::optional<AdsParams> ads_;
  std::optional<LlpParams> llp_;
};

}  // namespace lavpr
