#pragma once

// Synthetic place-clustered benchmarks.
//
// Each place draws a latent scene vector u. Per-modality prototypes are
// normalize(M_m u) with fixed random matrices M_v, M_t, so the two modalities
// are correlated through u but live in unrelated coordinate systems. Every
// record is normalize(prototype + sigma * g / sqrt(d)) with g ~ N(0, I_d);
// sigma is therefore the expected noise-to-signal norm ratio.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lavpr/storage.hpp"

namespace lavpr {

struct SynthConfig {
  std::size_t n_places = 120;
  std::size_t images_per_place = 4;
  // The first `train_places` places go wholly to the train split. In the
  // remaining places the first `queries_per_place` records are queries and
  // the rest database.
  std::size_t train_places = 0;
  std::size_t queries_per_place = 1;

  std::size_t d_v = 64;
  std::size_t d_t = 64;
  std::size_t latent_dim = 32;

  // Text token sequences: CLS (= the text descriptor) followed by
  // tokens_per_text tokens, of which distractor_tokens are drawn from a small
  // vocabulary shared by all places. token_dim must equal d_t.
  std::size_t token_dim = 64;
  std::size_t tokens_per_text = 8;
  std::size_t distractor_tokens = 0;

  // Vision patch sequences (toy encoder input); 0 disables them. Patch dim is d_v.
  std::size_t patches_per_image = 0;

  double sigma_v = 0.3;
  double sigma_t = 0.3;
  double degrade_fraction = 0.0;  // fraction of query records degraded (vision only)
  double sigma_degrade = 0.3;
  std::uint64_t seed = 0;

  /// Throws kInvalidArgument on an inconsistent configuration.
  void validate() const;
};

struct SynthBenchmark {
  Dataset data;
  std::vector<std::string> degraded_ids;
  MatrixD vision_prototypes;  // n_places x d_v
  MatrixD text_prototypes;    // n_places x d_t
};

/// Deterministic given cfg.seed; each record draws from its own RNG stream
/// derived from (seed, stream tag, record index).
SynthBenchmark gen_synthetic(const SynthConfig& cfg);

/// Re-noises the listed records (add sigma-scaled Gaussian noise, renormalize).
/// Other rows are untouched; sigma == 0 is an exact identity.
DescriptorSet degrade(const DescriptorSet& set, std::span<const std::string> record_ids,
                      double sigma, std::uint64_t seed);

/// Independent RNG stream for (seed, tag, index).
std::mt19937_64 derive_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index);

}  // namespace lavpr
