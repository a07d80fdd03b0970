#include "lavpr/lora.hpp"

#include <cmath>

namespace lavpr {

void LoraLayer::attach(std::size_t r, double adapter_scale, std::mt19937_64& rng) {
  const std::size_t d = out_dim();
  const std::size_t k = in_dim();
  if (r == 0 || r > std::min(d, k)) {
    throw Error(ErrorCode::kRankViolation, name + ": LoRA rank " + std::to_string(r) +
                                               " outside [1, min(" + std::to_string(d) + ", " +
                                               std::to_string(k) + ")]");
  }
  MatrixD init_a(r, k);
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(k)));
  for (auto& v : init_a.data()) v = nd(rng);
  a.emplace(name + ".A", std::move(init_a));
  b.emplace(name + ".B", MatrixD(d, r));
  scale = adapter_scale;
}

std::size_t LoraLayer::trainable_count() const {
  return adapted() ? rank() * (out_dim() + in_dim()) : 0;
}

MatrixD lora_forward(const MatrixD& x, const LoraLayer& layer) {
  if (x.cols() != layer.in_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, layer.name + ": input dim mismatch");
  }
  MatrixD y = affine(x, layer.w0, layer.bias);
  if (layer.adapted()) {
    MatrixD low = matmul_nt(x, layer.a->value);        // n x r
    MatrixD delta = matmul_nt(low, layer.b->value);    // n x d
    if (layer.scale != 1.0) scale_inplace(delta, layer.scale);
    add_inplace(y, delta);
  }
  return y;
}

MatrixD lora_backward(const MatrixD& x, LoraLayer& layer, const MatrixD& dy) {
  MatrixD dx = matmul(dy, layer.w0);
  if (layer.adapted()) {
    const MatrixD low = matmul_nt(x, layer.a->value);  // n x r
    MatrixD dlow = matmul(dy, layer.b->value);         // n x r
    scale_inplace(dlow, layer.scale);
    MatrixD dyscaled = dy;
    scale_inplace(dyscaled, layer.scale);
    accumulate_tn(dyscaled, low, layer.b->grad);  // d x r
    accumulate_tn(dlow, x, layer.a->grad);        // r x k
    add_inplace(dx, matmul(dlow, layer.a->value));
  }
  return dx;
}

MatrixD merge_lora(const LoraLayer& layer) {
  MatrixD w = layer.w0;
  if (layer.adapted()) {
    MatrixD delta = matmul(layer.b->value, layer.a->value);
    scale_inplace(delta, layer.scale);
    add_inplace(w, delta);
  }
  return w;
}

}  // namespace lavpr
