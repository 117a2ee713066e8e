#pragma once

#include <complex>
#include <cstddef>
#include <span>

#include "evreg/tensor/ndarray.hpp"

namespace evreg {

/// In-place unnormalized complex DFT. Radix-2 for powers of two, direct
/// summation otherwise.
void fft1d(std::span<std::complex<double>> data, bool inverse);

inline std::size_t half_width(std::size_t width) { return width / 2 + 1; }

/// Real-input 2D DFT over the two leading (spatial) axes of an [H,W,C]
/// array. Returns the half spectrum [H, W/2+1, C]; the channel axis is
/// transformed independently.
ComplexPair rfft2(const NdArray& x);

/// Inverse of rfft2. Imaginary parts that a real signal cannot carry (the
/// DC column and, for even widths, the Nyquist column) are discarded, so the
/// result is the real part of the Hermitian-completed inverse.
NdArray irfft2(const ComplexPair& spectrum, std::size_t out_width);

/// Hermitian multiplicity of half-spectrum column k for a width-W signal
/// (1 for the self-conjugate columns, 2 otherwise).
double hermitian_weight(std::size_t k, std::size_t width);

}  // namespace evreg
