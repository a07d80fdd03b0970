#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lavpr/numeric.hpp"

namespace lavpr {

struct GradCheckOptions {
  double step = 1e-5;   // central-difference half width; must lie in [1e-5, 1e-2]
  double tol = 1e-4;    // pass threshold on the max relative error
  // Relative error is |analytic - numeric| / max(|numeric|, denom_floor).
  double denom_floor = 1e-6;
  // 0 checks every entry; otherwise a seeded random subset per parameter.
  std::size_t max_entries_per_param = 0;
  std::uint64_t sample_seed = 0;
};

struct ParamCheck {
  std::string name;
  std::size_t entries_checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct CheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string failure;  // set when a perturbed loss was non-finite
};

/// Compares analytic gradients against central differences.
///
/// `loss_and_grad` must evaluate the loss at the current parameter values and
/// overwrite each Param::grad with its analytic gradient. The checker calls it
/// once at the base point, snapshots the gradients, then perturbs entries one
/// at a time. Parameter values are restored exactly afterwards.
CheckReport finite_diff_check(const std::function<double()>& loss_and_grad,
                              std::span<Param* const> params,
                              const GradCheckOptions& options = {});

}  // namespace lavpr
