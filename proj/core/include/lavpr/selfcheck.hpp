#pragma once

// Finite-difference sweep over every trainable module on a tiny synthetic
// problem: each fusion head with and without LLP, and the LoRA encoder pair
// under both cross-modal losses.

#include <cstdint>
#include <string>
#include <vector>

#include "lavpr/gradcheck.hpp"

namespace lavpr {

struct GradientCase {
  std::string name;  // e.g. "mlp+llp", "encoder/contrastive"
  std::uint64_t seed = 0;
  CheckReport report;
};

/// One case per (module, seed). Parameters are randomized away from their
/// initial values so that no gradient is trivially zero.
std::vector<GradientCase> gradient_suite(std::uint64_t first_seed, std::size_t seeds,
                                         const GradCheckOptions& options = {});

}  // namespace lavpr
