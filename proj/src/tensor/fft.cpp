#include "evreg/tensor/fft.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

namespace evreg {
namespace {

using cd = std::complex<double>;

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

// Forward roots of unity exp(-2*pi*i*k/n), computed directly per entry.
const std::vector<cd>& roots(std::size_t n) {
  thread_local std::map<std::size_t, std::vector<cd>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<cd> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) /
                       static_cast<double>(n);
    w[k] = cd(std::cos(ang), std::sin(ang));
  }
  return cache.emplace(n, std::move(w)).first->second;
}

void fft_radix2(std::span<cd> a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const std::vector<cd>& w_n = roots(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t k = 0; k < half; ++k) {
      const cd w = inverse ? std::conj(w_n[k * step]) : w_n[k * step];
      for (std::size_t i = 0; i < n; i += len) {
        const cd u = a[i + k];
        const cd v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

void dft_direct(std::span<cd> a, bool inverse) {
  const std::size_t n = a.size();
  const std::vector<cd>& w_n = roots(n);
  std::vector<cd> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cd acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const cd w = w_n[(k * j) % n];
      acc += a[j] * (inverse ? std::conj(w) : w);
    }
    out[k] = acc;
  }
  std::copy(out.begin(), out.end(), a.begin());
}

}  // namespace

void fft1d(std::span<cd> data, bool inverse) {
  if (data.size() <= 1) return;
  if (is_pow2(data.size())) {
    fft_radix2(data, inverse);
  } else {
    dft_direct(data, inverse);
  }
}

double hermitian_weight(std::size_t k, std::size_t width) {
  if (k == 0) return 1.0;
  if (width % 2 == 0 && k == width / 2) return 1.0;
  return 2.0;
}

ComplexPair rfft2(const NdArray& x) {
  if (x.empty()) throw Error("rfft2: empty input");
  if (x.rank() != 3) throw Error("rfft2: expected [H,W,C], got " + shape_str(x.shape()));
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t Wh = half_width(W);
  ComplexPair out(NdArray({H, Wh, C}), NdArray({H, Wh, C}));
  std::vector<cd> row(W), col(H);
  std::vector<cd> tmp(H * Wh);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) row[xx] = x[(y * W + xx) * C + c];
      fft1d(row, false);
      for (std::size_t k = 0; k < Wh; ++k) tmp[y * Wh + k] = row[k];
    }
    for (std::size_t k = 0; k < Wh; ++k) {
      for (std::size_t y = 0; y < H; ++y) col[y] = tmp[y * Wh + k];
      fft1d(col, false);
      for (std::size_t y = 0; y < H; ++y) {
        out.real[(y * Wh + k) * C + c] = col[y].real();
        out.imag[(y * Wh + k) * C + c] = col[y].imag();
      }
    }
  }
  return out;
}

NdArray irfft2(const ComplexPair& spectrum, std::size_t out_width) {
  if (spectrum.real.empty()) throw Error("irfft2: empty input");
  if (spectrum.real.rank() != 3) {
    throw Error("irfft2: expected [H,Wh,C], got " + shape_str(spectrum.shape()));
  }
  const std::size_t H = spectrum.real.dim(0), Wh = spectrum.real.dim(1),
                    C = spectrum.real.dim(2);
  if (out_width == 0 || half_width(out_width) != Wh) {
    throw Error("irfft2: half-spectrum width " + std::to_string(Wh) +
                " inconsistent with output width " + std::to_string(out_width));
  }
  const std::size_t W = out_width;
  NdArray out({H, W, C});
  std::vector<cd> col(H), row(W);
  std::vector<cd> tmp(H * Wh);
  const double norm = 1.0 / static_cast<double>(H * W);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < Wh; ++k) {
      for (std::size_t y = 0; y < H; ++y) {
        const std::size_t i = (y * Wh + k) * C + c;
        col[y] = cd(spectrum.real[i], spectrum.imag[i]);
      }
      fft1d(col, true);
      for (std::size_t y = 0; y < H; ++y) tmp[y * Wh + k] = col[y];
    }
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t k = 0; k < W; ++k) row[k] = 0.0;
      for (std::size_t k = 0; k < Wh; ++k) {
        const cd v = tmp[y * Wh + k];
        if (hermitian_weight(k, W) == 1.0) {
          row[k] = v.real();
        } else {
          row[k] = v;
          row[W - k] = std::conj(v);
        }
      }
      fft1d(row, true);
      for (std::size_t xx = 0; xx < W; ++xx) {
        out[(y * W + xx) * C + c] = row[xx].real() * norm;
      }
    }
  }
  return out;
}

}  // namespace evreg
