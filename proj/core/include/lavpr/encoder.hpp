#pragma once

// Tiny transformer encoder used for desk-scale cross-modal alignment.
//
//   H0 = Embed(X)
//   per block:  H1 = H + Wo MHA(Wq H, Wk H, Wv H)
//               H2 = H1 + W2 gelu(W1 H1)
//   z  = normalize(Proj(mean_rows(H_L)))
//
// All base weights are frozen; only LoRA factors attached to transformer
// block projections train. Embedding and output projection never carry
// adapters.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lavpr/lora.hpp"
#include "lavpr/storage.hpp"

namespace lavpr {

struct EncoderConfig {
  std::size_t input_dim = 64;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t blocks = 2;
  std::size_t output_dim = 64;
  std::size_t max_seq_len = 64;

  void validate() const;
};

enum class LoraTarget { kQkv, kAllLinear };

std::string_view to_string(LoraTarget t);
LoraTarget parse_lora_target(std::string_view s);

struct LoraSpec {
  LoraTarget target = LoraTarget::kAllLinear;
  std::size_t rank = 64;
  double scale = 1.0;
};

class ToyEncoder {
 public:
  ToyEncoder(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  /// Unit-norm embedding of one sequence (rows = tokens).
  /// Throws kSequenceTooLong beyond max_seq_len.
  std::vector<double> encode(const MatrixD& sequence) const;
  MatrixD encode_batch(const std::vector<MatrixD>& sequences) const;

  struct Trace;

  /// Forward pass that keeps the activations needed by backward().
  Trace forward(const MatrixD& sequence) const;
  /// Accumulates adapter gradients for dLoss/d(embedding) = d_embedding.
  void backward(const Trace& trace, std::span<const double> d_embedding);

  std::vector<Param*> trainable();
  void zero_grad();

  /// Every linear layer in forward order (embedding first, projection last).
  std::vector<LoraLayer*> layers();
  std::vector<const LoraLayer*> layers() const;

  std::size_t parameter_count() const;
  /// Parameters outside the embedding layer (frozen base only).
  std::size_t non_embedding_parameter_count() const;
  std::size_t trainable_parameter_count() const;

  /// FNV-1a over the bytes of every frozen tensor.
  std::uint64_t frozen_hash() const;

  TensorBundle base_bundle() const;
  TensorBundle adapter_bundle() const;
  static ToyEncoder from_bundles(const TensorBundle& base, const TensorBundle* adapters);

  friend std::size_t apply_lora(ToyEncoder& enc, const LoraSpec& spec, std::uint64_t seed);

 private:
  struct Block {
    LoraLayer q, k, v, o, ff1, ff2;
  };

  ToyEncoder() = default;

  EncoderConfig cfg_;
  LoraLayer embed_;
  std::vector<Block> blocks_;
  LoraLayer proj_;
  std::optional<LoraSpec> lora_;
};

struct ToyEncoder::Trace {
  struct BlockTrace {
    MatrixD input;
    MatrixD q, k, v;
    std::vector<MatrixD> attn;  // per head, S x S
    MatrixD mixed;              // concatenated head outputs
    MatrixD h1;
    MatrixD pre_ff;
    MatrixD act_ff;
  };
  std::vector<BlockTrace> blocks;
  std::size_t seq_len = 0;
  MatrixD pooled;  // 1 x model_dim
  Normalized out;
};

/// Attaches rank-r adapters to the targeted projections (Q/K/V, or every
/// linear inside the blocks) and returns the trainable parameter count,
/// sum of r * (d + k) over adapted layers.
std::size_t apply_lora(ToyEncoder& enc, const LoraSpec& spec, std::uint64_t seed);

}  // namespace lavpr
