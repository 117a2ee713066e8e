#include "evreg/flow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "evreg/tensor/ops.hpp"

namespace evreg {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

void check_field(const NdArray& u, const char* what) {
  if (u.rank() != 3 || u.dim(2) != 2) {
    throw Error(std::string(what) + ": flow must be [H,W,2], got " + shape_str(u.shape()));
  }
}

// Keys cubic convolution weights (a = -1/2) for fractional offset t.
void cubic_weights(double t, double w[4]) {
  const double t2 = t * t, t3 = t2 * t;
  w[0] = -0.5 * t3 + t2 - 0.5 * t;
  w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
  w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
  w[3] = 0.5 * t3 - 0.5 * t2;
}

// Cubic read of a [H,W] image with clamped coordinates and taps. Exact on
// integer coordinates; the interpolation bias is far below bilinear's,
// which otherwise sets the floor of the LK fixed point.
double sample_clamped(const NdArray& img, double y, double x) {
  const long H = static_cast<long>(img.dim(0)), W = static_cast<long>(img.dim(1));
  y = std::clamp(y, 0.0, static_cast<double>(H - 1));
  x = std::clamp(x, 0.0, static_cast<double>(W - 1));
  const long y0 = static_cast<long>(std::floor(y)), x0 = static_cast<long>(std::floor(x));
  double wy[4], wx[4];
  cubic_weights(y - static_cast<double>(y0), wy);
  cubic_weights(x - static_cast<double>(x0), wx);
  const double* d = img.data();
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    const long yy = std::clamp(y0 - 1 + i, 0L, H - 1);
    double row = 0.0;
    for (int j = 0; j < 4; ++j) row += wx[j] * d[yy * W + std::clamp(x0 - 1 + j, 0L, W - 1)];
    acc += wy[i] * row;
  }
  return acc;
}

// Central differences, one-sided at the borders.
void gradients(const NdArray& a, NdArray& gy, NdArray& gx) {
  const std::size_t H = a.dim(0), W = a.dim(1);
  gy = NdArray({H, W});
  gx = NdArray({H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t ym = y ? y - 1 : y, yp = y + 1 < H ? y + 1 : y;
      const std::size_t xm = x ? x - 1 : x, xp = x + 1 < W ? x + 1 : x;
      gy(y, x) = yp == ym ? 0.0 : (a(yp, x) - a(ym, x)) / static_cast<double>(yp - ym);
      gx(y, x) = xp == xm ? 0.0 : (a(y, xp) - a(y, xm)) / static_cast<double>(xp - xm);
    }
  }
}

struct LkState {
  NdArray a, b, gy, gx;
};

LkState prepare(const LkImages& im, const LkOptions& opts) {
  if (im.a.rank() != 2 || im.a.shape() != im.b.shape()) {
    throw Error("lk: images must be two [H,W] arrays of equal shape");
  }
  if (opts.window_radius < 1) throw Error("lk: window radius must be >= 1");
  if (!(opts.relaxation > 0.0 && opts.relaxation <= 1.0)) throw Error("lk: relaxation must be in (0,1]");
  LkState s{gaussian_blur(im.a, opts.presmooth_sigma), gaussian_blur(im.b, opts.presmooth_sigma), {}, {}};
  gradients(s.a, s.gy, s.gx);
  return s;
}

// One Gauss-Newton update of the locally constant flow at every pixel. The
// window around p is compared at n - u(p) for all its members n.
NdArray lk_step(const LkState& s, const NdArray& u, const LkOptions& opts, NdArray* confidence,
                CostSummary* cost) {
  const std::size_t H = s.a.dim(0), W = s.a.dim(1);
  const long R = opts.window_radius;
  NdArray out = u;
  if (confidence) *confidence = NdArray({H, W});
  double csum = 0.0, cmin = INFINITY, cmax = 0.0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double uy = u(y, x, 0), ux = u(y, x, 1);
      double gyy = 0, gxy = 0, gxx = 0, by = 0, bx = 0;
      long count = 0;
      for (long dy = -R; dy <= R; ++dy) {
        const long ny = static_cast<long>(y) + dy;
        if (ny < 0 || ny >= static_cast<long>(H)) continue;
        for (long dx = -R; dx <= R; ++dx) {
          const long nx = static_cast<long>(x) + dx;
          if (nx < 0 || nx >= static_cast<long>(W)) continue;
          const double qy = static_cast<double>(ny) - uy, qx = static_cast<double>(nx) - ux;
          // Members whose source left the image carry no information.
          if (qy < 0.0 || qx < 0.0 || qy > static_cast<double>(H - 1) || qx > static_cast<double>(W - 1)) continue;
          const double ay = sample_clamped(s.gy, qy, qx), ax = sample_clamped(s.gx, qy, qx);
          const double r = sample_clamped(s.a, qy, qx) - s.b(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
          gyy += ay * ay;
          gxy += ay * ax;
          gxx += ax * ax;
          by += ay * r;
          bx += ax * r;
          ++count;
        }
      }
      const double c = std::abs(sample_clamped(s.a, static_cast<double>(y) - uy, static_cast<double>(x) - ux) - s.b(y, x));
      csum += c;
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
      if (count < 3) continue;
      const double tr = gyy + gxx, det = gyy * gxx - gxy * gxy;
      const double lmin = 0.5 * (tr - std::sqrt(std::max(tr * tr - 4 * det, 0.0)));
      if (lmin / static_cast<double>(count) < opts.min_eigen) continue;
      // a(q - du) ~ a(q) - g.du must match b, so g.du = a(q) - b.
      double duy = (gxx * by - gxy * bx) / det;
      double dux = (gyy * bx - gxy * by) / det;
      const double n = std::hypot(duy, dux), cap = static_cast<double>(R);
      if (n > cap) {
        duy *= cap / n;
        dux *= cap / n;
      }
      out(y, x, 0) = uy + opts.relaxation * duy;
      out(y, x, 1) = ux + opts.relaxation * dux;
      if (confidence) (*confidence)(y, x) = 1.0;
    }
  }
  if (cost) *cost = {csum / static_cast<double>(H * W), cmin, cmax};
  return out;
}

NdArray half_sum(const EventTensorStack& st, std::size_t begin, std::size_t end) {
  const std::size_t H = st.data.dim(1), W = st.data.dim(2), B = st.bins();
  NdArray img({H, W});
  for (std::size_t n = begin; n < end; ++n) {
    for (std::size_t p = 0; p < H * W; ++p) {
      for (std::size_t b = 0; b < B; ++b) img[p] += st.data[(n * H * W + p) * B + b];
    }
  }
  return img;
}

std::uint64_t half_centre(const EventTensorStack& st, std::size_t begin, std::size_t end) {
  return (st.windows[begin].first + st.windows[end - 1].second) / 2;
}

}  // namespace

void validate(const FlowField& f) {
  check_field(f.u, "flow");
  if (!f.u.all_finite()) throw Error("flow: non-finite displacement");
  if (f.t_a == f.t_b) throw Error("flow: empty interval");
}

WarpResult warp(const NdArray& x, const FlowField& flow) {
  check_field(flow.u, "warp");
  const std::size_t H = flow.height(), W = flow.width();
  if (x.rank() < 2 || x.dim(0) != H || x.dim(1) != W) {
    throw Error("warp: image " + shape_str(x.shape()) + " does not match flow grid");
  }
  const NdArray img = x.rank() == 2 ? x.reshaped({H, W, 1}) : x;
  NdArray coords({H, W, 2});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t c = 0; c < W; ++c) {
      coords(y, c, 0) = static_cast<double>(y) - flow.u(y, c, 0);
      coords(y, c, 1) = static_cast<double>(c) - flow.u(y, c, 1);
    }
  }
  SampleResult s = bilinear_sample(img, coords);
  if (x.rank() == 2) s.values = s.values.reshaped({H, W});
  return {std::move(s.values), std::move(s.validity)};
}

NdArray gaussian_blur(const NdArray& x, double sigma) {
  if (x.rank() != 2 && x.rank() != 3) throw Error("gaussian_blur: expected [H,W] or [H,W,C]");
  if (sigma <= 0.0) return x;
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.rank() == 3 ? x.dim(2) : 1;
  const long R = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * R + 1));
  double ks = 0.0;
  for (long i = -R; i <= R; ++i) ks += k[static_cast<std::size_t>(i + R)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= ks;
  const auto clampi = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(n) - 1));
  };
  NdArray tmp(x.shape()), out(x.shape());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t c = 0; c < W; ++c) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        double acc = 0.0;
        for (long i = -R; i <= R; ++i) acc += k[static_cast<std::size_t>(i + R)] * x[(y * W + clampi(static_cast<long>(c) + i, W)) * C + ch];
        tmp[(y * W + c) * C + ch] = acc;
      }
    }
  }
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t c = 0; c < W; ++c) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        double acc = 0.0;
        for (long i = -R; i <= R; ++i) acc += k[static_cast<std::size_t>(i + R)] * tmp[(clampi(static_cast<long>(y) + i, H) * W + c) * C + ch];
        out[(y * W + c) * C + ch] = acc;
      }
    }
  }
  return out;
}

NdArray smooth_flow_noise(std::size_t H, std::size_t W, double rms, std::uint64_t seed,
                          double sigma_px) {
  if (!(rms >= 0.0)) throw Error("flow noise: eps must be >= 0");
  NdArray n({H, W, 2});
  if (rms == 0.0 || H * W == 0) return n;
  Rng rng(splitmix(seed));
  n = gaussian_blur(randn({H, W, 2}, rng), sigma_px);
  const double cur = std::sqrt(std::inner_product(n.values().begin(), n.values().end(), n.values().begin(), 0.0) /
                               static_cast<double>(H * W));
  if (cur > 0.0) n *= rms / cur;
  return n;
}

FlowPair provide_flow_gt_noisy(const NdArray& gt, std::uint64_t t_prev, std::uint64_t t_k,
                               double eps, std::uint64_t seed) {
  check_field(gt, "provide_flow_gt_noisy");
  if (!(eps >= 0.0)) throw Error("provide_flow_gt_noisy: eps must be >= 0");
  const std::size_t H = gt.dim(0), W = gt.dim(1);
  FlowPair out;
  out.forward = {gt, t_prev, t_k, FlowDirection::Forward};
  out.backward = {gt, t_k, t_prev, FlowDirection::Backward};
  out.backward.u *= -1.0;
  if (eps > 0.0) {
    out.forward.u += smooth_flow_noise(H, W, eps, splitmix(seed) ^ 0xf0);
    out.backward.u += smooth_flow_noise(H, W, eps, splitmix(seed) ^ 0xb0);
  }
  return out;
}

FlowPair provide_flow_gt_noisy(const SceneSample& sample, double eps, std::uint64_t seed) {
  return provide_flow_gt_noisy(sample.flow, sample.t_prev, sample.t_k, eps, seed);
}

NdArray lk_flow(const LkImages& im, const LkOptions& opts, NdArray* confidence, const NdArray* gt,
                std::vector<double>* error_log) {
  const LkState s = prepare(im, opts);
  const std::size_t H = s.a.dim(0), W = s.a.dim(1);
  NdArray u({H, W, 2});
  // Windows within 2R of the border are truncated; the log skips them.
  NdArray inner({H, W});
  const std::size_t band = 2 * static_cast<std::size_t>(opts.window_radius);
  for (std::size_t y = band; y + band < H; ++y) {
    for (std::size_t x = band; x + band < W; ++x) inner(y, x) = 1.0;
  }
  const bool log = error_log && gt;
  if (log) error_log->push_back(rms_epe(u, *gt, &inner));
  NdArray conf({H, W});
  for (int it = 0; it < opts.iterations; ++it) {
    u = lk_step(s, u, opts, &conf, nullptr);
    if (log) error_log->push_back(rms_epe(u, *gt, &inner));
  }
  if (confidence) *confidence = std::move(conf);
  return u;
}

LkResult estimate_flow_lk(const EventTensorStack& stack, const LkOptions& opts, const NdArray* gt) {
  if (stack.data.rank() != 4 || stack.frames() < 2) {
    throw Error("estimate_flow_lk: need a stack of at least 2 frames");
  }
  if (stack.windows.size() != stack.frames()) throw Error("estimate_flow_lk: window list does not match frames");
  const std::size_t N = stack.frames(), half = N / 2;
  LkResult r;
  const NdArray uf = lk_flow({half_sum(stack, 0, half), half_sum(stack, half, N)}, opts, &r.confidence, gt,
                             &r.error_log);
  const EventTensorStack rev = reverse_frames(stack);
  // Reversal keeps the second half as the larger one for odd N.
  const std::size_t rhalf = N - half;
  const NdArray ub = lk_flow({half_sum(rev, 0, rhalf), half_sum(rev, rhalf, N)}, opts);
  r.flows.forward = {uf, half_centre(stack, 0, half), half_centre(stack, half, N), FlowDirection::Forward};
  r.flows.backward = {ub, half_centre(stack, half, N), half_centre(stack, 0, half), FlowDirection::Backward};
  return r;
}

Refiner linear_refiner(const NdArray& u_gt, double rate) {
  check_field(u_gt, "linear_refiner");
  return [u_gt, rate](const NdArray& u, CostSummary& cost) {
    NdArray next = u_gt;
    double sum = 0.0, mn = INFINITY, mx = 0.0;
    const std::size_t P = u.dim(0) * u.dim(1);
    for (std::size_t p = 0; p < P; ++p) {
      const double dy = u[2 * p] - u_gt[2 * p], dx = u[2 * p + 1] - u_gt[2 * p + 1];
      next[2 * p] += rate * dy;
      next[2 * p + 1] += rate * dx;
      const double c = std::hypot(dy, dx);
      sum += c;
      mn = std::min(mn, c);
      mx = std::max(mx, c);
    }
    cost = {sum / static_cast<double>(P), mn, mx};
    return next;
  };
}

Refiner lk_refiner(const LkImages& im, const LkOptions& opts) {
  auto s = std::make_shared<LkState>(prepare(im, opts));
  return [s, opts](const NdArray& u, CostSummary& cost) { return lk_step(*s, u, opts, nullptr, &cost); };
}

double rms_epe(const NdArray& a, const NdArray& b, const NdArray* weight) {
  check_field(a, "rms_epe");
  if (a.shape() != b.shape()) throw Error("rms_epe: shape mismatch");
  const std::size_t P = a.dim(0) * a.dim(1);
  if (weight && weight->size() != P) throw Error("rms_epe: weight does not match the grid");
  double num = 0.0, den = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    const double w = weight ? (*weight)[p] : 1.0;
    const double dy = a[2 * p] - b[2 * p], dx = a[2 * p + 1] - b[2 * p + 1];
    num += w * (dy * dy + dx * dx);
    den += w;
  }
  return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

RefinementTrace contraction_probe(const Refiner& refiner, const ProbeInput& in, int J,
                                  double eps_prev, double lipschitz, std::uint64_t seed) {
  if (J < 1) throw Error("contraction_probe: J must be >= 1");
  check_field(in.u_gt, "contraction_probe");
  if (in.u_prev.shape() != in.u_gt.shape()) throw Error("contraction_probe: u_prev does not match u_gt");
  if (!(eps_prev >= 0.0) || !(lipschitz >= 0.0) || !(in.dt_s >= 0.0)) {
    throw Error("contraction_probe: eps_prev, L and dt must be >= 0");
  }
  const NdArray* w = in.weight.empty() ? nullptr : &in.weight;
  RefinementTrace tr;
  NdArray u = in.u_prev;
  u += smooth_flow_noise(u.dim(0), u.dim(1), eps_prev, seed);
  tr.errors.push_back(rms_epe(u, in.u_gt, w));
  tr.iterates.push_back(u);
  bool all_up = true;
  for (int j = 0; j < J; ++j) {
    CostSummary c;
    u = refiner(u, c);
    check_field(u, "contraction_probe: refiner output");
    tr.costs.push_back(c);
    tr.errors.push_back(rms_epe(u, in.u_gt, w));
    tr.iterates.push_back(u);
    const double prev = tr.errors[static_cast<std::size_t>(j)], cur = tr.errors.back();
    if (!(prev > 0.0 && cur > prev)) all_up = false;
  }
  const double e0 = tr.errors.front(), eJ = tr.errors.back();
  // The geometric mean of the ratios telescopes to (eJ/e0)^(1/J).
  tr.rho_fit = e0 > 0.0 ? std::pow(eJ / e0, 1.0 / J) : 0.0;
  tr.diverging = all_up;
  tr.bound = std::pow(std::min(tr.rho_fit, 1.0), J) * (lipschitz * in.dt_s + eps_prev);
  // Relative slack covers the rounding of pow only.
  tr.bound_holds = eJ <= tr.bound * (1.0 + 1e-12) + 1e-300;
  return tr;
}

}  // namespace evreg
