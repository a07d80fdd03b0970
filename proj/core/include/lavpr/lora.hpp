#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "lavpr/numeric.hpp"

namespace lavpr {

/// A frozen affine map y = W0 x + bias with an optional low-rank adapter:
///
///   y = (W0 + scale * B A) x + bias,   W0: d x k, A: r x k, B: d x r
///
/// The adapter is evaluated as W0 x + scale * B (A x); the dense update BA is
/// only formed by merge_lora().
struct LoraLayer {
  std::string name;
  MatrixD w0;    // out x in, frozen
  MatrixD bias;  // 1 x out, frozen
  std::optional<Param> a;
  std::optional<Param> b;
  double scale = 1.0;

  std::size_t out_dim() const { return w0.rows(); }
  std::size_t in_dim() const { return w0.cols(); }
  bool adapted() const { return a.has_value(); }
  std::size_t rank() const { return a ? a->value.rows() : 0; }

  /// Attaches a rank-r adapter: A ~ N(0, 1/in), B = 0, so the layer output is
  /// unchanged until B moves. Throws kRankViolation unless 1 <= r <= min(d, k).
  void attach(std::size_t r, double adapter_scale, std::mt19937_64& rng);

  /// Number of trainable entries, r * (d + k); 0 when not adapted.
  std::size_t trainable_count() const;
};

/// Rows of `x` (n x in) through the layer: n x out.
MatrixD lora_forward(const MatrixD& x, const LoraLayer& layer);

/// Accumulates dA, dB (when adapted) and returns dL/dx.
MatrixD lora_backward(const MatrixD& x, LoraLayer& layer, const MatrixD& dy);

/// W0 + scale * B A.
MatrixD merge_lora(const LoraLayer& layer);

}  // namespace lavpr
