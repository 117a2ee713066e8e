#include "evreg/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evreg/tensor/ops.hpp"

namespace evreg {

double grad_check(const GradCheckFn& op, const std::vector<NdArray>& inputs,
                  const GradCheckOptions& opts) {
  Rng rng(opts.seed);
  std::vector<std::size_t> wrt = opts.wrt;
  if (wrt.empty()) {
    wrt.resize(inputs.size());
    std::iota(wrt.begin(), wrt.end(), 0);
  }

  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const bool diff = std::find(wrt.begin(), wrt.end(), i) != wrt.end();
    vars.emplace_back(inputs[i], diff);
  }
  Var y = op(vars);
  const NdArray weights = randn(y.shape(), rng);

  auto loss_at = [&](const std::vector<NdArray>& xs) {
    std::vector<Var> cs;
    for (const NdArray& x : xs) cs.push_back(constant(x));
    const NdArray out = op(cs).value();
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
    if (!std::isfinite(s)) throw Error("grad_check: non-finite loss");
    return s;
  };

  Var loss = ops::weighted_sum(y, weights);
  if (!std::isfinite(loss.value()[0])) throw Error("grad_check: non-finite loss");
  backward(loss);

  double worst = 0.0;
  std::vector<NdArray> probe = inputs;
  for (std::size_t i : wrt) {
    const NdArray analytic = vars[i].grad();
    std::vector<std::size_t> idx(inputs[i].size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_entries && opts.max_entries < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_entries);
    }
    for (std::size_t j : idx) {
      const double x0 = inputs[i][j];
      probe[i][j] = x0 + opts.eps;
      const double lp = loss_at(probe);
      probe[i][j] = x0 - opts.eps;
      const double lm = loss_at(probe);
      probe[i][j] = x0;
      const double fd = (lp - lm) / (2.0 * opts.eps);
      const double a = analytic[j];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
  }
  return worst;
}

}  // namespace evreg
