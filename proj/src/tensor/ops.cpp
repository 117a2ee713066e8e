#include "evreg/tensor/ops.hpp"

#include <algorithm>
#include <cmath>

#include "evreg/tensor/fft.hpp"
#include "gemm.hpp"

namespace evreg::ops {
namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
}

std::size_t last_dim(const Var& x) {
  if (x.value().rank() == 0) throw Error("expected at least one axis");
  return x.shape().back();
}

// Splits a channel-last spatial tensor into (frames, H, W, C).
struct Spatial {
  std::size_t D, H, W, C;
};

Spatial spatial_of(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw Error(std::string(op) + ": expected [H,W,C] or [D,H,W,C], got " + shape_str(s));
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Shared 2D correlation kernels on one frame; kernel layout [kh,kw,Ci,Co].
struct ConvGeom {
  std::size_t H, W, Ci, Ho, Wo, Co, kh, kw, stride, pad;
};

// Output columns [ox0, ox1) whose tap kx lands inside the input row.
struct ColumnRange {
  std::size_t ox0, ox1, ix0;
};

inline ColumnRange column_range(const ConvGeom& g, std::size_t kx) {
  const long pad = static_cast<long>(g.pad), st = static_cast<long>(g.stride);
  const long lo = std::max(0L, (pad - static_cast<long>(kx) + st - 1) / st);
  const long hi = std::min(static_cast<long>(g.Wo), (static_cast<long>(g.W) - 1 + pad - static_cast<long>(kx)) / st + 1);
  if (hi <= lo) return {0, 0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi),
          static_cast<std::size_t>(lo * st + static_cast<long>(kx) - pad)};
}

// Sparse inputs (event stacks) scatter each non-zero pixel into the outputs
// it reaches instead of running the dense GEMMs.
constexpr double kSparseDensity = 0.15;

bool is_sparse(const double* in, std::size_t n) {
  std::size_t nz = 0;
  for (std::size_t i = 0; i < n; ++i) nz += in[i] != 0.0;
  return static_cast<double>(nz) < kSparseDensity * static_cast<double>(n);
}

// Calls f(t, tap offset in k, input offset, output pixel) for every
// non-zero input value and every tap that maps it onto an output pixel.
template <typename F>
void for_each_sparse_tap(const ConvGeom& g, const double* in, std::size_t in_frame, std::size_t taps, F&& f) {
  const long pad = static_cast<long>(g.pad), st = static_cast<long>(g.stride);
  for (std::size_t t = 0; t < taps; ++t) {
    const double* frame = in + t * in_frame;
    for (std::size_t iy = 0; iy < g.H; ++iy) {
      for (std::size_t ix = 0; ix < g.W; ++ix) {
        const std::size_t ioff = (iy * g.W + ix) * g.Ci;
        bool any = false;
        for (std::size_t ci = 0; ci < g.Ci; ++ci) any = any || frame[ioff + ci] != 0.0;
        if (!any) continue;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long ny = static_cast<long>(iy) + pad - static_cast<long>(ky);
          if (ny < 0 || ny % st != 0 || ny / st >= static_cast<long>(g.Ho)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long nx = static_cast<long>(ix) + pad - static_cast<long>(kx);
            if (nx < 0 || nx % st != 0 || nx / st >= static_cast<long>(g.Wo)) continue;
            const std::size_t opix = static_cast<std::size_t>(ny / st) * g.Wo + static_cast<std::size_t>(nx / st);
            f(((t * g.kh + ky) * g.kw + kx) * g.Ci * g.Co, t * in_frame + ioff, opix);
          }
        }
      }
    }
  }
}

// Each (tap, output row) pair is one small GEMM over a strided run of input
// pixels, so no patch matrix is materialised. `taps` consecutive input frames
// (frame stride in_frame) feed one output frame; the kernel is
// [taps,kh,kw,Ci,Co].
void conv_frame_forward(const ConvGeom& g, const double* in, std::size_t in_frame, std::size_t taps,
                        const double* k, double* out) {
  const std::size_t tap = g.Ci * g.Co;
  if (is_sparse(in, taps * in_frame)) {
    for_each_sparse_tap(g, in, in_frame, taps, [&](std::size_t toff, std::size_t ioff, std::size_t opix) {
      double* o = out + opix * g.Co;
      for (std::size_t ci = 0; ci < g.Ci; ++ci) {
        if (in[ioff + ci] != 0.0) axpy(in[ioff + ci], k + toff + ci * g.Co, o, g.Co);
      }
    });
    return;
  }
  for (std::size_t t = 0; t < taps; ++t) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const ColumnRange cr = column_range(g, kx);
        if (cr.ox1 == cr.ox0) continue;
        const double* kk = k + ((t * g.kh + ky) * g.kw + kx) * tap;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          const double* a = in + t * in_frame + (static_cast<std::size_t>(iy) * g.W + cr.ix0) * g.Ci;
          detail::gemm_acc(cr.ox1 - cr.ox0, g.Co, g.Ci, a, g.stride * g.Ci, kk, g.Co,
                           out + (oy * g.Wo + cr.ox0) * g.Co, g.Co);
        }
      }
    }
  }
}

void conv_frame_backward(const ConvGeom& g, const double* in, std::size_t in_frame, std::size_t taps,
                         const double* k, const double* gout, double* gin, double* gk) {
  const std::size_t tap = g.Ci * g.Co;
  if (!gin && gk && is_sparse(in, taps * in_frame)) {
    for_each_sparse_tap(g, in, in_frame, taps, [&](std::size_t toff, std::size_t ioff, std::size_t opix) {
      const double* go = gout + opix * g.Co;
      for (std::size_t ci = 0; ci < g.Ci; ++ci) {
        if (in[ioff + ci] != 0.0) axpy(in[ioff + ci], go, gk + toff + ci * g.Co, g.Co);
      }
    });
    return;
  }
  thread_local std::vector<double> kt;
  for (std::size_t t = 0; t < taps; ++t) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const ColumnRange cr = column_range(g, kx);
        if (cr.ox1 == cr.ox0) continue;
        const std::size_t toff = ((t * g.kh + ky) * g.kw + kx) * tap;
        if (gin) detail::transpose_into(k + toff, g.Ci, g.Co, kt);
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          const std::size_t ioff = t * in_frame + (static_cast<std::size_t>(iy) * g.W + cr.ix0) * g.Ci;
          const double* go = gout + (oy * g.Wo + cr.ox0) * g.Co;
          const std::size_t n = cr.ox1 - cr.ox0;
          if (gin) detail::gemm_acc(n, g.Ci, g.Co, go, g.Co, kt.data(), g.Ci, gin + ioff, g.stride * g.Ci);
          if (gk) detail::gemm_tn_acc(g.Ci, g.Co, n, in + ioff, g.stride * g.Ci, go, g.Co, gk + toff, g.Co);
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  NdArray out = a.value();
  out += b.value();
  return record(std::move(out), {a, b}, [](Node& self) {
    accumulate_grad(*self.inputs[0], self.grad);
    accumulate_grad(*self.inputs[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  NdArray out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return record(std::move(out), {a, b}, [](Node& self) {
    accumulate_grad(*self.inputs[0], self.grad);
    NdArray neg = self.grad;
    neg *= -1.0;
    accumulate_grad(*self.inputs[1], neg);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  NdArray out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return record(std::move(out), {a, b}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      NdArray& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      NdArray& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  NdArray out = a.value();
  out *= s;
  return record(std::move(out), {a}, [s](Node& self) {
    NdArray g = self.grad;
    g *= s;
    accumulate_grad(*self.inputs[0], g);
  });
}

Var add_bias(const Var& x, const Var& b) {
  const std::size_t C = last_dim(x);
  if (b.value().size() != C) {
    throw Error("add_bias: bias size " + std::to_string(b.value().size()) +
                " does not match channels " + std::to_string(C));
  }
  NdArray out = x.value();
  const std::size_t rows = out.size() / C;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] += b.value()[c];
  }
  return record(std::move(out), {x, b}, [C, rows](Node& self) {
    accumulate_grad(*self.inputs[0], self.grad);
    Node& nb = *self.inputs[1];
    if (nb.requires_grad) {
      NdArray& g = nb.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < C; ++c) g[c] += self.grad[r * C + c];
      }
    }
  });
}

Var mul_channels(const Var& x, const Var& gate) {
  const std::size_t C = last_dim(x);
  if (gate.value().size() != C) {
    throw Error("mul_channels: gate size " + std::to_string(gate.value().size()) +
                " does not match channels " + std::to_string(C));
  }
  NdArray out = x.value();
  const std::size_t rows = out.size() / C;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] *= gate.value()[c];
  }
  return record(std::move(out), {x, gate}, [C, rows](Node& self) {
    Node& nx = *self.inputs[0];
    Node& ng = *self.inputs[1];
    if (nx.requires_grad) {
      NdArray& g = nx.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < C; ++c) g[r * C + c] += self.grad[r * C + c] * ng.value[c];
      }
    }
    if (ng.requires_grad) {
      NdArray& g = ng.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < C; ++c) g[c] += self.grad[r * C + c] * nx.value[r * C + c];
      }
    }
  });
}

Var relu(const Var& x) {
  NdArray out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return record(std::move(out), {x}, [](Node& self) {
    Node& nx = *self.inputs[0];
    NdArray& g = nx.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (nx.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var sigmoid(const Var& x) {
  NdArray out = x.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return record(std::move(out), {x}, [](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Var tanh(const Var& x) {
  NdArray out = x.value();
  for (double& v : out.values()) v = std::tanh(v);
  return record(std::move(out), {x}, [](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Var softmax(const Var& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw Error("softmax: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  NdArray out(s);
  const NdArray& in = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * n * inner + j;
      double m = -INFINITY;
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, in[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(in[base + i * inner] - m);
        out[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= z;
    }
  }
  return record(std::move(out), {x}, [outer, inner, n](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t base = o * n * inner + j;
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          d += self.grad[base + i * inner] * self.value[base + i * inner];
        }
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t k = base + i * inner;
          g[k] += self.value[k] * (self.grad[k] - d);
        }
      }
    }
  });
}

namespace {

// Gradients of out = a @ b given gout: ga += gout @ b^T, gb += a^T @ gout.
void gemm_backward(const double* a, const double* b, const double* gout, double* ga,
                   double* gb, std::size_t R, std::size_t K, std::size_t N) {
  std::vector<double> t;
  if (ga) {
    detail::transpose_into(b, K, N, t);
    detail::gemm_acc(R, K, N, gout, t.data(), ga);
  }
  if (gb) {
    detail::transpose_into(a, R, K, t);
    detail::gemm_acc(K, N, R, t.data(), gout, gb);
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error("matmul: incompatible shapes " + shape_str(a.shape()) + " @ " +
                shape_str(b.shape()));
  }
  const std::size_t R = a.dim(0), K = a.dim(1), N = b.dim(1);
  NdArray out({R, N});
  detail::gemm_acc(R, N, K, a.value().data(), b.value().data(), out.data());
  return record(std::move(out), {a, b}, [R, K, N](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    gemm_backward(na.value.data(), nb.value.data(), self.grad.data(),
                  na.requires_grad ? na.grad_buffer().data() : nullptr,
                  nb.requires_grad ? nb.grad_buffer().data() : nullptr, R, K, N);
  });
}

Var transpose(const Var& a) {
  if (a.value().rank() != 2) throw Error("transpose: expected a matrix");
  const std::size_t R = a.dim(0), C = a.dim(1);
  NdArray out({C, R});
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = a.value()[r * C + c];
  }
  return record(std::move(out), {a}, [R, C](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) g[r * C + c] += self.grad[c * R + r];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const std::size_t K = last_dim(x);
  if (w.value().rank() != 2 || w.dim(0) != K) {
    throw Error("linear: weight " + shape_str(w.shape()) + " incompatible with input " +
                shape_str(x.shape()));
  }
  const std::size_t N = w.dim(1);
  const std::size_t R = x.value().size() / K;
  Shape oshape = x.shape();
  oshape.back() = N;
  NdArray out(oshape);
  const bool has_bias = b.defined();
  if (has_bias) {
    if (b.value().size() != N) throw Error("linear: bias size mismatch");
    for (std::size_t r = 0; r < R; ++r) {
      std::copy_n(b.value().data(), N, out.data() + r * N);
    }
  }
  detail::gemm_acc(R, N, K, x.value().data(), w.value().data(), out.data());
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return record(std::move(out), std::move(inputs), [R, K, N, has_bias](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nw = *self.inputs[1];
    gemm_backward(nx.value.data(), nw.value.data(), self.grad.data(),
                  nx.requires_grad ? nx.grad_buffer().data() : nullptr,
                  nw.requires_grad ? nw.grad_buffer().data() : nullptr, R, K, N);
    if (has_bias && self.inputs[2]->requires_grad) {
      NdArray& gb = self.inputs[2]->grad_buffer();
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t n = 0; n < N; ++n) gb[n] += self.grad[r * N + n];
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  NdArray out = x.value().reshaped(std::move(shape));
  return record(std::move(out), {x}, [](Node& self) {
    Node& nx = *self.inputs[0];
    NdArray& g = nx.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  Shape base = parts[0].shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != base.size() || !std::equal(s.begin(), s.end() - 1, base.begin())) {
      throw Error("concat_channels: leading shapes differ: " + shape_str(s) + " vs " +
                  shape_str(base));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = parts[0].value().size() / widths[0];
  Shape oshape = base;
  oshape.back() = total;
  NdArray out(oshape);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src + r * widths[p], widths[p], out.data() + r * total + off);
    }
    off += widths[p];
  }
  return record(std::move(out), parts, [widths, rows, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      Node& n = *self.inputs[p];
      if (n.requires_grad) {
        NdArray& g = n.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[p]; ++c) {
            g[r * widths[p] + c] += self.grad[r * total + off + c];
          }
        }
      }
      off += widths[p];
    }
  });
}

Var slice_channels(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t C = last_dim(x);
  if (begin >= end || end > C) throw Error("slice_channels: bad range");
  const std::size_t rows = x.value().size() / C;
  const std::size_t w = end - begin;
  Shape oshape = x.shape();
  oshape.back() = w;
  NdArray out(oshape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.value().data() + r * C + begin, w, out.data() + r * w);
  }
  return record(std::move(out), {x}, [rows, C, begin, w](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) g[r * C + begin + c] += self.grad[r * w + c];
    }
  });
}

Var avg_pool(const Var& x, std::size_t k) {
  const Spatial s = spatial_of(x.shape(), "avg_pool");
  if (k == 0 || s.H % k || s.W % k) {
    throw Error("avg_pool: spatial size " + shape_str(x.shape()) + " not divisible by " +
                std::to_string(k));
  }
  const std::size_t Ho = s.H / k, Wo = s.W / k;
  Shape oshape = x.shape();
  oshape[oshape.size() - 3] = Ho;
  oshape[oshape.size() - 2] = Wo;
  NdArray out(oshape);
  const double inv = 1.0 / static_cast<double>(k * k);
  const NdArray& in = x.value();
  for (std::size_t d = 0; d < s.D; ++d) {
    for (std::size_t y = 0; y < s.H; ++y) {
      for (std::size_t xx = 0; xx < s.W; ++xx) {
        const double* src = in.data() + ((d * s.H + y) * s.W + xx) * s.C;
        double* dst = out.data() + ((d * Ho + y / k) * Wo + xx / k) * s.C;
        axpy(inv, src, dst, s.C);
      }
    }
  }
  return record(std::move(out), {x}, [s, k, Ho, Wo, inv](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    for (std::size_t d = 0; d < s.D; ++d) {
      for (std::size_t y = 0; y < s.H; ++y) {
        for (std::size_t xx = 0; xx < s.W; ++xx) {
          const double* src = self.grad.data() + ((d * Ho + y / k) * Wo + xx / k) * s.C;
          axpy(inv, src, g.data() + ((d * s.H + y) * s.W + xx) * s.C, s.C);
        }
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  if (x.value().rank() != 3) throw Error("global_avg_pool: expected [H,W,C]");
  const std::size_t C = x.dim(2);
  const std::size_t P = x.dim(0) * x.dim(1);
  NdArray out({1, 1, C});
  const double inv = 1.0 / static_cast<double>(P);
  for (std::size_t p = 0; p < P; ++p) axpy(inv, x.value().data() + p * C, out.data(), C);
  return record(std::move(out), {x}, [C, P, inv](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    for (std::size_t p = 0; p < P; ++p) axpy(inv, self.grad.data(), g.data() + p * C, C);
  });
}

Var mean_axis0(const Var& x) {
  if (x.value().rank() < 2) throw Error("mean_axis0: expected rank >= 2");
  const std::size_t D = x.dim(0);
  const std::size_t inner = x.value().size() / D;
  Shape oshape(x.shape().begin() + 1, x.shape().end());
  NdArray out(oshape);
  const double inv = 1.0 / static_cast<double>(D);
  for (std::size_t d = 0; d < D; ++d) axpy(inv, x.value().data() + d * inner, out.data(), inner);
  return record(std::move(out), {x}, [D, inner, inv](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    for (std::size_t d = 0; d < D; ++d) axpy(inv, self.grad.data(), g.data() + d * inner, inner);
  });
}

Var conv2d(const Var& x, const Var& k, std::size_t stride, std::size_t padding) {
  const Spatial s = spatial_of(x.shape(), "conv2d");
  const NdArray& kv = k.value();
  if (kv.rank() != 4 || kv.dim(2) != s.C) {
    throw Error("conv2d: kernel " + shape_str(k.shape()) + " incompatible with input " +
                shape_str(x.shape()));
  }
  if (stride == 0) throw Error("conv2d: stride must be positive");
  const std::size_t kh = kv.dim(0), kw = kv.dim(1), Co = kv.dim(3);
  if (s.H + 2 * padding < kh || s.W + 2 * padding < kw) {
    throw Error("conv2d: kernel larger than padded input");
  }
  ConvGeom g{s.H, s.W, s.C, (s.H + 2 * padding - kh) / stride + 1,
             (s.W + 2 * padding - kw) / stride + 1, Co, kh, kw, stride, padding};
  Shape oshape = x.value().rank() == 3 ? Shape{g.Ho, g.Wo, Co} : Shape{s.D, g.Ho, g.Wo, Co};
  NdArray out(oshape);
  const std::size_t in_frame = s.H * s.W * s.C, out_frame = g.Ho * g.Wo * Co;
  for (std::size_t d = 0; d < s.D; ++d) {
    conv_frame_forward(g, x.value().data() + d * in_frame, in_frame, 1, kv.data(), out.data() + d * out_frame);
  }
  return record(std::move(out), {x, k}, [g, s, in_frame, out_frame](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nk = *self.inputs[1];
    double* gin = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
    double* gk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
    for (std::size_t d = 0; d < s.D; ++d) {
      conv_frame_backward(g, nx.value.data() + d * in_frame, in_frame, 1, nk.value.data(),
                          self.grad.data() + d * out_frame, gin ? gin + d * in_frame : nullptr, gk);
    }
  });
}

Var conv3d(const Var& x, const Var& k) {
  const NdArray& xv = x.value();
  const NdArray& kv = k.value();
  if (xv.rank() != 4 || kv.rank() != 5 || kv.dim(3) != xv.dim(3)) {
    throw Error("conv3d: kernel " + shape_str(k.shape()) + " incompatible with input " +
                shape_str(x.shape()));
  }
  const std::size_t D = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Ci = xv.dim(3);
  const std::size_t kd = kv.dim(0), kh = kv.dim(1), kw = kv.dim(2), Co = kv.dim(4);
  if (D < kd) throw Error("conv3d: depth " + std::to_string(D) + " smaller than kernel depth");
  const std::size_t Do = D - kd + 1;
  ConvGeom g{H, W, Ci, H, W, Co, kh, kw, 1, kh / 2};
  NdArray out({Do, H, W, Co});
  const std::size_t in_frame = H * W * Ci, out_frame = H * W * Co;
  for (std::size_t d = 0; d < Do; ++d) {
    conv_frame_forward(g, xv.data() + d * in_frame, in_frame, kd, kv.data(), out.data() + d * out_frame);
  }
  return record(std::move(out), {x, k}, [g, Do, kd, in_frame, out_frame](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nk = *self.inputs[1];
    double* gin = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
    double* gk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
    for (std::size_t d = 0; d < Do; ++d) {
      conv_frame_backward(g, nx.value.data() + d * in_frame, in_frame, kd, nk.value.data(),
                          self.grad.data() + d * out_frame, gin ? gin + d * in_frame : nullptr, gk);
    }
  });
}

Var depthwise_conv2d(const Var& x, const Var& k) {
  const NdArray& xv = x.value();
  const NdArray& kv = k.value();
  if (xv.rank() != 3 || kv.rank() != 3 || kv.dim(2) != xv.dim(2)) {
    throw Error("depthwise_conv2d: kernel " + shape_str(k.shape()) +
                " incompatible with input " + shape_str(x.shape()));
  }
  const std::size_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  const std::size_t kh = kv.dim(0), kw = kv.dim(1);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  NdArray out({H, W, C});
  auto visit = [=](auto&& fn) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(y + ky) - ph;
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(xx + kx) - pw;
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            fn((y * W + xx) * C, (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C,
               (ky * kw + kx) * C);
          }
        }
      }
    }
  };
  visit([&](std::size_t o, std::size_t i, std::size_t kk) {
    for (std::size_t c = 0; c < C; ++c) out[o + c] += xv[i + c] * kv[kk + c];
  });
  return record(std::move(out), {x, k}, [visit, C](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nk = *self.inputs[1];
    double* gin = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
    double* gk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
    const double* xv = nx.value.data();
    const double* kv = nk.value.data();
    const double* go = self.grad.data();
    visit([&](std::size_t o, std::size_t i, std::size_t kk) {
      for (std::size_t c = 0; c < C; ++c) {
        if (gin) gin[i + c] += go[o + c] * kv[kk + c];
        if (gk) gk[kk + c] += go[o + c] * xv[i + c];
      }
    });
  });
}

namespace {

struct Bilinear {
  long y0, x0;
  double ly, lx;
  // Corner validity for (y0,x0), (y0,x0+1), (y0+1,x0), (y0+1,x0+1).
  bool v[4];
};

inline Bilinear bilinear_at(double py, double px, std::size_t H, std::size_t W) {
  Bilinear b;
  const double fy = std::floor(py), fx = std::floor(px);
  b.y0 = static_cast<long>(fy);
  b.x0 = static_cast<long>(fx);
  b.ly = py - fy;
  b.lx = px - fx;
  const long h = static_cast<long>(H), w = static_cast<long>(W);
  const bool y0ok = b.y0 >= 0 && b.y0 < h, y1ok = b.y0 + 1 >= 0 && b.y0 + 1 < h;
  const bool x0ok = b.x0 >= 0 && b.x0 < w, x1ok = b.x0 + 1 >= 0 && b.x0 + 1 < w;
  b.v[0] = y0ok && x0ok;
  b.v[1] = y0ok && x1ok;
  b.v[2] = y1ok && x0ok;
  b.v[3] = y1ok && x1ok;
  return b;
}

struct DeformGeom {
  std::size_t H, W, Ci, Co, kh, kw;
};

}  // namespace

Var deformable_conv2d(const Var& x, const Var& k, const Var& offsets, const Var& mask) {
  const NdArray& xv = x.value();
  const NdArray& kv = k.value();
  if (xv.rank() != 3 || kv.rank() != 4 || kv.dim(2) != xv.dim(2)) {
    throw Error("deformable_conv2d: kernel " + shape_str(k.shape()) +
                " incompatible with input " + shape_str(x.shape()));
  }
  const std::size_t H = xv.dim(0), W = xv.dim(1), Ci = xv.dim(2);
  const std::size_t kh = kv.dim(0), kw = kv.dim(1), Co = kv.dim(3);
  const std::size_t T = kh * kw;
  if (offsets.shape() != Shape{H, W, 2 * T}) {
    throw Error("deformable_conv2d: offsets " + shape_str(offsets.shape()) + " expected " +
                shape_str({H, W, 2 * T}));
  }
  if (mask.shape() != Shape{H, W, T}) {
    throw Error("deformable_conv2d: mask " + shape_str(mask.shape()) + " expected " +
                shape_str({H, W, T}));
  }
  const DeformGeom g{H, W, Ci, Co, kh, kw};
  NdArray out({H, W, Co});
  std::vector<double> sample(Ci);
  const double* off = offsets.value().data();
  const double* msk = mask.value().data();
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t xx = 0; xx < W; ++xx) {
      const std::size_t p = y * W + xx;
      double* o = out.data() + p * Co;
      for (std::size_t t = 0; t < T; ++t) {
        const double m = msk[p * T + t];
        if (m == 0.0) continue;
        const std::size_t ky = t / kw, kx = t % kw;
        const double py = static_cast<double>(y) + static_cast<double>(ky) -
                          static_cast<double>(kh / 2) + off[p * 2 * T + 2 * t];
        const double px = static_cast<double>(xx) + static_cast<double>(kx) -
                          static_cast<double>(kw / 2) + off[p * 2 * T + 2 * t + 1];
        const Bilinear b = bilinear_at(py, px, H, W);
        if (!(b.v[0] || b.v[1] || b.v[2] || b.v[3])) continue;
        const double w[4] = {(1 - b.ly) * (1 - b.lx), (1 - b.ly) * b.lx, b.ly * (1 - b.lx),
                             b.ly * b.lx};
        std::fill(sample.begin(), sample.end(), 0.0);
        for (int c = 0; c < 4; ++c) {
          if (!b.v[c] || w[c] == 0.0) continue;
          const long cy = b.y0 + (c >> 1), cx = b.x0 + (c & 1);
          axpy(m * w[c], xv.data() + (static_cast<std::size_t>(cy) * W + static_cast<std::size_t>(cx)) * Ci,
               sample.data(), Ci);
        }
        const double* kk = kv.data() + t * Ci * Co;
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          if (sample[ci] != 0.0) axpy(sample[ci], kk + ci * Co, o, Co);
        }
      }
    }
  }
  return record(std::move(out), {x, k, offsets, mask}, [g](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nk = *self.inputs[1];
    Node& no = *self.inputs[2];
    Node& nm = *self.inputs[3];
    const std::size_t T = g.kh * g.kw;
    double* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
    double* gk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
    double* goff = no.requires_grad ? no.grad_buffer().data() : nullptr;
    double* gm = nm.requires_grad ? nm.grad_buffer().data() : nullptr;
    const double* xv = nx.value.data();
    const double* kv = nk.value.data();
    const double* off = no.value.data();
    const double* msk = nm.value.data();
    std::vector<double> v(g.Ci), gs(g.Ci);
    for (std::size_t y = 0; y < g.H; ++y) {
      for (std::size_t xx = 0; xx < g.W; ++xx) {
        const std::size_t p = y * g.W + xx;
        const double* go = self.grad.data() + p * g.Co;
        for (std::size_t t = 0; t < T; ++t) {
          const double m = msk[p * T + t];
          const std::size_t ky = t / g.kw, kx = t % g.kw;
          const double py = static_cast<double>(y) + static_cast<double>(ky) -
                            static_cast<double>(g.kh / 2) + off[p * 2 * T + 2 * t];
          const double px = static_cast<double>(xx) + static_cast<double>(kx) -
                            static_cast<double>(g.kw / 2) + off[p * 2 * T + 2 * t + 1];
          const Bilinear b = bilinear_at(py, px, g.H, g.W);
          if (!(b.v[0] || b.v[1] || b.v[2] || b.v[3])) continue;
          const double w[4] = {(1 - b.ly) * (1 - b.lx), (1 - b.ly) * b.lx, b.ly * (1 - b.lx),
                               b.ly * b.lx};
          const double dwy[4] = {-(1 - b.lx), -b.lx, 1 - b.lx, b.lx};
          const double dwx[4] = {-(1 - b.ly), 1 - b.ly, -b.ly, b.ly};
          const double* corner[4] = {nullptr, nullptr, nullptr, nullptr};
          std::fill(v.begin(), v.end(), 0.0);
          for (int c = 0; c < 4; ++c) {
            if (!b.v[c]) continue;
            const long cy = b.y0 + (c >> 1), cx = b.x0 + (c & 1);
            corner[c] = xv + (static_cast<std::size_t>(cy) * g.W + static_cast<std::size_t>(cx)) * g.Ci;
            if (w[c] != 0.0) axpy(w[c], corner[c], v.data(), g.Ci);
          }
          const double* kk = kv + t * g.Ci * g.Co;
          for (std::size_t ci = 0; ci < g.Ci; ++ci) gs[ci] = dot(kk + ci * g.Co, go, g.Co);
          if (gk && m != 0.0) {
            double* gkk = gk + t * g.Ci * g.Co;
            for (std::size_t ci = 0; ci < g.Ci; ++ci) {
              if (v[ci] != 0.0) axpy(m * v[ci], go, gkk + ci * g.Co, g.Co);
            }
          }
          if (gm) gm[p * T + t] += dot(gs.data(), v.data(), g.Ci);
          if (m == 0.0) continue;
          if (gx) {
            for (int c = 0; c < 4; ++c) {
              if (!corner[c] || w[c] == 0.0) continue;
              const std::size_t base = static_cast<std::size_t>(corner[c] - xv);
              axpy(m * w[c], gs.data(), gx + base, g.Ci);
            }
          }
          if (goff) {
            double dy = 0.0, dx = 0.0;
            for (int c = 0; c < 4; ++c) {
              if (!corner[c]) continue;
              const double d = dot(gs.data(), corner[c], g.Ci);
              dy += dwy[c] * d;
              dx += dwx[c] * d;
            }
            goff[p * 2 * T + 2 * t] += m * dy;
            goff[p * 2 * T + 2 * t + 1] += m * dx;
          }
        }
      }
    }
  });
}

namespace {

// [H,Wh,2C] packed layout <-> ComplexPair.
ComplexPair unpack(const NdArray& packed) {
  const std::size_t H = packed.dim(0), Wh = packed.dim(1), C2 = packed.dim(2);
  if (C2 % 2) throw Error("spectrum: channel count must be even, got " + std::to_string(C2));
  const std::size_t C = C2 / 2;
  ComplexPair out(NdArray({H, Wh, C}), NdArray({H, Wh, C}));
  for (std::size_t p = 0; p < H * Wh; ++p) {
    std::copy_n(packed.data() + p * C2, C, out.real.data() + p * C);
    std::copy_n(packed.data() + p * C2 + C, C, out.imag.data() + p * C);
  }
  return out;
}

NdArray pack(const ComplexPair& z) {
  const std::size_t H = z.real.dim(0), Wh = z.real.dim(1), C = z.real.dim(2);
  NdArray out({H, Wh, 2 * C});
  for (std::size_t p = 0; p < H * Wh; ++p) {
    std::copy_n(z.real.data() + p * C, C, out.data() + p * 2 * C);
    std::copy_n(z.imag.data() + p * C, C, out.data() + p * 2 * C + C);
  }
  return out;
}

void scale_columns(ComplexPair& z, std::size_t width, bool divide, double extra) {
  const std::size_t H = z.real.dim(0), Wh = z.real.dim(1), C = z.real.dim(2);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t k = 0; k < Wh; ++k) {
      const double c = hermitian_weight(k, width);
      const double f = (divide ? 1.0 / c : c) * extra;
      for (std::size_t ch = 0; ch < C; ++ch) {
        z.real[(y * Wh + k) * C + ch] *= f;
        z.imag[(y * Wh + k) * C + ch] *= f;
      }
    }
  }
}

}  // namespace

Var rfft2(const Var& x) {
  if (x.value().rank() != 3) throw Error("rfft2: expected [H,W,C], got " + shape_str(x.shape()));
  const std::size_t H = x.dim(0), W = x.dim(1);
  NdArray out = pack(evreg::rfft2(x.value()));
  return record(std::move(out), {x}, [H, W](Node& self) {
    // Adjoint of the half-spectrum DFT: HW * irfft2(G / hermitian_weight).
    ComplexPair g = unpack(self.grad);
    scale_columns(g, W, true, static_cast<double>(H * W));
    accumulate_grad(*self.inputs[0], evreg::irfft2(g, W));
  });
}

Var irfft2(const Var& spectrum, std::size_t width) {
  if (spectrum.value().rank() != 3) {
    throw Error("irfft2: expected [H,Wh,2C], got " + shape_str(spectrum.shape()));
  }
  NdArray out = evreg::irfft2(unpack(spectrum.value()), width);
  const std::size_t H = out.dim(0);
  return record(std::move(out), {spectrum}, [H, width](Node& self) {
    // Adjoint: hermitian_weight / (HW) * rfft2(g).
    ComplexPair g = evreg::rfft2(self.grad);
    scale_columns(g, width, false, 1.0 / static_cast<double>(H * width));
    accumulate_grad(*self.inputs[0], pack(g));
  });
}

Var complex_mul(const Var& a, const Var& b) {
  require_same(a, b, "complex_mul");
  const std::size_t C2 = last_dim(a);
  if (C2 % 2) throw Error("complex_mul: channel count must be even");
  const std::size_t C = C2 / 2;
  const std::size_t rows = a.value().size() / C2;
  NdArray out(a.shape());
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * C2;
    for (std::size_t c = 0; c < C; ++c) {
      const double ar = av[o + c], ai = av[o + C + c];
      const double br = bv[o + c], bi = bv[o + C + c];
      out[o + c] = ar * br - ai * bi;
      out[o + C + c] = ar * bi + ai * br;
    }
  }
  return record(std::move(out), {a, b}, [rows, C, C2](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    double* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
    const double* av = na.value.data();
    const double* bv = nb.value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * C2;
      for (std::size_t c = 0; c < C; ++c) {
        const double gr = self.grad[o + c], gi = self.grad[o + C + c];
        const double ar = av[o + c], ai = av[o + C + c];
        const double br = bv[o + c], bi = bv[o + C + c];
        if (ga) {
          ga[o + c] += gr * br + gi * bi;
          ga[o + C + c] += -gr * bi + gi * br;
        }
        if (gb) {
          gb[o + c] += gr * ar + gi * ai;
          gb[o + C + c] += -gr * ai + gi * ar;
        }
      }
    }
  });
}

namespace {

struct Interp {
  std::size_t i0, i1;
  double w1;
};

std::vector<Interp> upsample_taps(std::size_t n, std::size_t factor) {
  std::vector<Interp> taps(n * factor);
  for (std::size_t o = 0; o < n * factor; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Var upsample_bilinear(const Var& x, std::size_t factor) {
  if (x.value().rank() != 3) throw Error("upsample_bilinear: expected [H,W,C]");
  if (factor == 0) throw Error("upsample_bilinear: factor must be positive");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const auto ty = upsample_taps(H, factor);
  const auto tx = upsample_taps(W, factor);
  const std::size_t Ho = H * factor, Wo = W * factor;
  NdArray out({Ho, Wo, C});
  const double* in = x.value().data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double* o = out.data() + (oy * Wo + ox) * C;
      const Interp& a = ty[oy];
      const Interp& b = tx[ox];
      const double w[4] = {(1 - a.w1) * (1 - b.w1), (1 - a.w1) * b.w1, a.w1 * (1 - b.w1),
                           a.w1 * b.w1};
      const std::size_t idx[4] = {a.i0 * W + b.i0, a.i0 * W + b.i1, a.i1 * W + b.i0,
                                  a.i1 * W + b.i1};
      for (int c = 0; c < 4; ++c) axpy(w[c], in + idx[c] * C, o, C);
    }
  }
  return record(std::move(out), {x}, [ty, tx, W, C, Ho, Wo](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const double* go = self.grad.data() + (oy * Wo + ox) * C;
        const Interp& a = ty[oy];
        const Interp& b = tx[ox];
        const double w[4] = {(1 - a.w1) * (1 - b.w1), (1 - a.w1) * b.w1, a.w1 * (1 - b.w1),
                             a.w1 * b.w1};
        const std::size_t idx[4] = {a.i0 * W + b.i0, a.i0 * W + b.i1, a.i1 * W + b.i0,
                                    a.i1 * W + b.i1};
        for (int c = 0; c < 4; ++c) axpy(w[c], go, g.data() + idx[c] * C, C);
      }
    }
  });
}

Var sum(const Var& x) {
  NdArray out({1}, evreg::sum(x.value()));
  return record(std::move(out), {x}, [](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    const double s = self.grad[0];
    for (double& v : g.values()) v += s;
  });
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var weighted_sum(const Var& x, const NdArray& w) {
  if (w.shape() != x.shape()) throw Error("weighted_sum: weight shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.value()[i];
  return record(NdArray({1}, s), {x}, [w](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    const double s = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * w[i];
  });
}

}  // namespace evreg::ops

namespace evreg {

NdArray randn(Shape shape, Rng& rng, double stddev) {
  NdArray out(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : out.values()) v = dist(rng);
  return out;
}

NdArray rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  NdArray out(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : out.values()) v = dist(rng);
  return out;
}

SampleResult bilinear_sample(const NdArray& x, const NdArray& coords) {
  if (x.rank() != 3) throw Error("bilinear_sample: expected [H,W,C] input");
  if (coords.rank() != 3 || coords.dim(2) != 2) {
    throw Error("bilinear_sample: coords must be [H',W',2], got " + shape_str(coords.shape()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t Ho = coords.dim(0), Wo = coords.dim(1);
  SampleResult r{NdArray({Ho, Wo, C}), NdArray({Ho, Wo})};
  const double ymax = static_cast<double>(H - 1), xmax = static_cast<double>(W - 1);
  for (std::size_t p = 0; p < Ho * Wo; ++p) {
    const double py = coords[2 * p], px = coords[2 * p + 1];
    if (!(py >= 0.0 && py <= ymax && px >= 0.0 && px <= xmax)) continue;
    r.validity[p] = 1.0;
    const std::size_t y0 = static_cast<std::size_t>(std::floor(py));
    const std::size_t x0 = static_cast<std::size_t>(std::floor(px));
    const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double ly = py - static_cast<double>(y0), lx = px - static_cast<double>(x0);
    const double* a = x.data() + (y0 * W + x0) * C;
    const double* b = x.data() + (y0 * W + x1) * C;
    const double* c = x.data() + (y1 * W + x0) * C;
    const double* d = x.data() + (y1 * W + x1) * C;
    double* o = r.values.data() + p * C;
    for (std::size_t ch = 0; ch < C; ++ch) {
      o[ch] = (1 - ly) * ((1 - lx) * a[ch] + lx * b[ch]) + ly * ((1 - lx) * c[ch] + lx * d[ch]);
    }
  }
  return r;
}

}  // namespace evreg
