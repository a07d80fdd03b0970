#include "lavpr/gradcheck.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace lavpr {

CheckReport finite_diff_check(const std::function<double()>& loss_and_grad,
                              std::span<Param* const> params,
                              const GradCheckOptions& options) {
  if (!(options.step >= 1e-5 && options.step <= 1e-2)) {
    throw Error(ErrorCode::kInvalidArgument, "finite_diff_check: step outside [1e-5, 1e-2]");
  }
  CheckReport report;
  const double base = loss_and_grad();
  if (!std::isfinite(base)) {
    report.failure = "non-finite loss at base point";
    return report;
  }
  std::vector<MatrixD> analytic;
  analytic.reserve(params.size());
  for (const Param* p : params) analytic.push_back(p->grad);

  std::mt19937_64 rng(options.sample_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    auto values = p.value.data();
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries_per_param != 0 && idx.size() > options.max_entries_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries_per_param);
    }

    ParamCheck pc;
    pc.name = p.name;
    for (std::size_t i : idx) {
      const double original = values[i];
      values[i] = original + options.step;
      const double plus = loss_and_grad();
      values[i] = original - options.step;
      const double minus = loss_and_grad();
      values[i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        report.failure = "non-finite loss perturbing " + p.name + "[" + std::to_string(i) + "]";
        report.params.push_back(pc);
        for (std::size_t pj = 0; pj < params.size(); ++pj) params[pj]->grad = analytic[pj];
        return report;
      }
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[pi].data()[i];
      const double rel = std::abs(a - numeric) / std::max(std::abs(numeric), options.denom_floor);
      ++pc.entries_checked;
      if (rel > pc.max_rel_error || pc.entries_checked == 1) {
        pc.max_rel_error = rel;
        pc.worst_index = i;
        pc.analytic_at_worst = a;
        pc.numeric_at_worst = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(pc);
  }
  // Leave the gradients as the analytic values at the base point.
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  report.passed = report.max_rel_error < options.tol;
  return report;
}

}  // namespace lavpr
