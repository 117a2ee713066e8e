#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "evreg/events/events.hpp"
#include "evreg/synth/scene.hpp"

namespace evreg {

enum class FlowDirection { Forward, Backward };

/// Total displacement (dy,dx) in pixels over [t_a, t_b]. A backward field
/// covers the same interval with t_a and t_b swapped.
struct FlowField {
  NdArray u;  // [H,W,2]
  std::uint64_t t_a = 0, t_b = 0;
  FlowDirection direction = FlowDirection::Forward;

  std::size_t height() const { return u.dim(0); }
  std::size_t width() const { return u.dim(1); }
};

/// Throws unless u is a finite [H,W,2] field over a non-empty interval.
void validate(const FlowField& f);

struct WarpResult {
  NdArray values;    // [H,W,C]
  NdArray validity;  // [H,W], 0 where p - u(p) leaves the image
};

/// Backward warp: values(p) = bilinear sample of x at p - u(p).
WarpResult warp(const NdArray& x, const FlowField& flow);

/// Gaussian-smoothed white noise [H,W,2], rescaled so that the root mean
/// square of its per-pixel magnitude is exactly `rms` (zero when rms == 0).
NdArray smooth_flow_noise(std::size_t H, std::size_t W, double rms, std::uint64_t seed,
                          double sigma_px = 3.0);

struct FlowPair {
  FlowField forward;
  FlowField backward;
};

/// O_f = u_gt + noise, O_b = -u_gt + independent noise, both with RMS
/// magnitude eps. `gt` defaults to sample.flow.
FlowPair provide_flow_gt_noisy(const SceneSample& sample, double eps, std::uint64_t seed);
FlowPair provide_flow_gt_noisy(const NdArray& gt, std::uint64_t t_prev, std::uint64_t t_k,
                               double eps, std::uint64_t seed);

struct LkOptions {
  int iterations = 8;
  int window_radius = 4;
  double presmooth_sigma = 1.0;  // applied to the accumulated halves
  /// Pixels whose structure-tensor minimum eigenvalue (per window pixel)
  /// falls below this keep zero flow and are flagged low-confidence.
  double min_eigen = 1e-4;
  /// Fraction of each Gauss-Newton update applied; below 1 the iteration
  /// contracts at a roughly constant rate instead of superlinearly.
  double relaxation = 1.0;
};

struct LkResult {
  FlowPair flows;
  NdArray confidence;  // [H,W] forward: 1 well-conditioned, 0 degenerate
  /// RMS end-point error of the forward estimate after each iteration,
  /// index 0 being the zero initialisation, over pixels at least two window
  /// radii from the border. Filled only when gt is given.
  std::vector<double> error_log;
};

/// Iterative Lucas-Kanade between the summed first and second halves of the
/// stack (forward) and of its time reversal (backward).
LkResult estimate_flow_lk(const EventTensorStack& stack, const LkOptions& opts = {},
                          const NdArray* gt = nullptr);

/// LK on two images: returns u with a(p - u(p)) ~ b(p).
struct LkImages {
  NdArray a, b;  // [H,W]
};
NdArray lk_flow(const LkImages& im, const LkOptions& opts, NdArray* confidence = nullptr,
                const NdArray* gt = nullptr, std::vector<double>* error_log = nullptr);

/// Summary of the matching cost after one refinement step. The cost volume
/// itself stays internal to the refiner.
struct CostSummary {
  double mean = 0.0, min = 0.0, max = 0.0;
};

/// One refinement step u^(j+1) = U(u^(j)).
using Refiner = std::function<NdArray(const NdArray& u, CostSummary& cost)>;

/// u_gt + rate * (u - u_gt); the cost is the per-pixel distance to u_gt.
Refiner linear_refiner(const NdArray& u_gt, double rate);
/// One Gauss-Newton LK update on the image pair; the cost is |a(p-u) - b|.
Refiner lk_refiner(const LkImages& im, const LkOptions& opts = {});

struct ProbeInput {
  NdArray u_gt;    // [H,W,2] flow of the current interval
  NdArray u_prev;  // [H,W,2] flow of the previous interval
  double dt_s = 0.0;  // t_k - t_{k-1} in seconds
  NdArray weight;  // optional [H,W] region over which errors are measured
};

struct RefinementTrace {
  std::vector<NdArray> iterates;  // u^(0..J)
  std::vector<CostSummary> costs;  // one per step
  std::vector<double> errors;      // RMS ||u^(j) - u_gt|| for j = 0..J
  double rho_fit = 0.0;            // geometric mean of successive error ratios
  double bound = 0.0;              // min(rho_fit,1)^J * (L*dt + eps_prev)
  bool diverging = false;          // every ratio above 1; bound not asserted
  bool bound_holds = true;
};

/// Starts from u_prev perturbed by smooth noise of RMS eps_prev, runs J
/// refinement steps and checks the final error against the contraction
/// bound. `lipschitz` bounds the flow's change between intervals in px/s.
/// A failed bound is reported in the trace, never thrown.
RefinementTrace contraction_probe(const Refiner& refiner, const ProbeInput& in, int J,
                                  double eps_prev, double lipschitz, std::uint64_t seed = 0);

/// RMS of the per-pixel magnitude of a - b over [H,W,2], optionally weighted.
double rms_epe(const NdArray& a, const NdArray& b, const NdArray* weight = nullptr);

/// Separable Gaussian blur of every channel of [H,W] or [H,W,C], clamped
/// borders.
NdArray gaussian_blur(const NdArray& x, double sigma);

}  // namespace evreg
