#pragma once

#include <filesystem>
#include <iosfwd>

#include "evreg/tensor/ndarray.hpp"

namespace evreg {

/// FLT1: "FLT1", u32 H, u32 W, u32 C, then H*W*C little-endian float32.
/// Values are narrowed to float32 on write.
void write_flt1(std::ostream& out, const NdArray& x);
NdArray read_flt1(std::istream& in, const std::string& context = "FLT1");
void write_flt1(const std::filesystem::path& path, const NdArray& x);
NdArray read_flt1(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255). x is [H,W] or [H,W,1]; values are rounded
/// and clamped to 0..255.
void write_pgm(const std::filesystem::path& path, const NdArray& x);
/// Returns [H,W] raw 0..255 values.
NdArray read_pgm(const std::filesystem::path& path);

}  // namespace evreg
