#include "evreg/events/formats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace evreg {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& context) {
  char b[4];
  if (!in.read(b, 4)) throw Error(context + ": truncated header");
  std::uint32_t v;
  std::memcpy(&v, b, 4);
  return v;
}

}  // namespace

void write_flt1(std::ostream& out, const NdArray& x) {
  std::size_t H = 1, W = 1, C = 1;
  if (x.rank() == 3) {
    H = x.dim(0), W = x.dim(1), C = x.dim(2);
  } else if (x.rank() == 2) {
    H = x.dim(0), W = x.dim(1);
  } else if (x.rank() == 1) {
    C = x.dim(0);
  } else {
    // Higher ranks fold leading axes into H; C stays the last axis.
    C = x.shape().back();
    W = x.shape()[x.rank() - 2];
    H = x.size() / std::max<std::size_t>(C * W, 1);
  }
  out.write("FLT1", 4);
  put_u32(out, static_cast<std::uint32_t>(H));
  put_u32(out, static_cast<std::uint32_t>(W));
  put_u32(out, static_cast<std::uint32_t>(C));
  std::vector<float> buf(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) buf[i] = static_cast<float>(x[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

NdArray read_flt1(std::istream& in, const std::string& context) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FLT1", 4) != 0) {
    throw Error(context + ": bad magic (expected FLT1)");
  }
  const std::size_t H = get_u32(in, context), W = get_u32(in, context), C = get_u32(in, context);
  std::vector<float> buf(H * W * C);
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw Error(context + ": truncated payload");
  }
  NdArray out({H, W, C});
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i];
  return out;
}

void write_flt1(const std::filesystem::path& path, const NdArray& x) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_flt1(out, x);
  if (!out) throw Error("write failed: " + path.string());
}

NdArray read_flt1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_flt1(in, path.string());
}

void write_pgm(const std::filesystem::path& path, const NdArray& x) {
  if (x.rank() < 2 || (x.rank() == 3 && x.dim(2) != 1) || x.rank() > 3) {
    throw Error("write_pgm: expected [H,W] or [H,W,1], got " + shape_str(x.shape()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << W << ' ' << H << "\n255\n";
  std::string px(H * W, '\0');
  for (std::size_t i = 0; i < H * W; ++i) {
    px[i] = static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(x[i]), 0L, 255L)));
  }
  out.write(px.data(), static_cast<std::streamsize>(px.size()));
  if (!out) throw Error("write failed: " + path.string());
}

NdArray read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic;
  std::size_t W = 0, H = 0, maxval = 0;
  in >> magic >> W >> H >> maxval;
  if (magic != "P5" || !in || maxval != 255) {
    throw Error(path.string() + ": expected binary PGM with maxval 255");
  }
  in.get();
  std::string px(H * W, '\0');
  if (!in.read(px.data(), static_cast<std::streamsize>(px.size()))) {
    throw Error(path.string() + ": truncated pixel data");
  }
  NdArray out({H, W});
  for (std::size_t i = 0; i < H * W; ++i) out[i] = static_cast<unsigned char>(px[i]);
  return out;
}

}  // namespace evreg
