#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "evreg/tensor/autograd.hpp"

namespace evreg {

using GradCheckFn = std::function<Var(const std::vector<Var>&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  std::uint64_t seed = 0;
  /// Entries probed per input; 0 probes every entry. Probed entries are
  /// chosen with a seeded shuffle.
  std::size_t max_entries = 0;
  /// Inputs to differentiate; empty means all.
  std::vector<std::size_t> wrt;
};

/// Compares reverse-mode gradients of L = sum(w * op(inputs)), w seeded
/// gaussian, against central differences. Returns the largest elementwise
/// |a - fd| / max(|a|, |fd|, 1e-8). Throws on a non-finite loss.
double grad_check(const GradCheckFn& op, const std::vector<NdArray>& inputs,
                  const GradCheckOptions& opts = {});

}  // namespace evreg
