#include "evreg/events/events.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evreg {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

constexpr std::size_t kHeaderBytes = 20;
constexpr std::size_t kRecordBytes = 13;

template <typename T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void store(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_event(const Event& e, const EventStream& s, std::uint64_t prev_t, bool has_prev,
                 const std::string& where) {
  if (e.p != 1 && e.p != -1) {
    throw Error(where + ": polarity " + std::to_string(e.p) + " not in {-1,+1}");
  }
  if (e.x >= s.width || e.y >= s.height) {
    throw Error(where + ": coordinate (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                ") outside " + std::to_string(s.width) + "x" + std::to_string(s.height));
  }
  if (has_prev && e.t < prev_t) {
    throw Error(where + ": timestamp " + std::to_string(e.t) + " decreases from " +
                std::to_string(prev_t));
  }
}

EventStream parse_evt1(const std::string& buf, const std::string& name) {
  if (buf.size() < kHeaderBytes) throw Error(name + ": truncated EVT1 header");
  EventStream s;
  s.width = load<std::uint32_t>(buf.data() + 4);
  s.height = load<std::uint32_t>(buf.data() + 8);
  const std::uint64_t count = load<std::uint64_t>(buf.data() + 12);
  if (count > (buf.size() - kHeaderBytes) / kRecordBytes ||
      buf.size() != kHeaderBytes + count * kRecordBytes) {
    throw Error(name + ": EVT1 body holds " + std::to_string(buf.size() - kHeaderBytes) +
                " bytes, header declares " + std::to_string(count) + " events");
  }
  s.events.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t off = kHeaderBytes + i * kRecordBytes;
    const char* r = buf.data() + off;
    Event& e = s.events[i];
    e.t = load<std::uint64_t>(r);
    e.x = load<std::uint16_t>(r + 8);
    e.y = load<std::uint16_t>(r + 10);
    e.p = load<std::int8_t>(r + 12);
    check_event(e, s, i ? s.events[i - 1].t : 0, i > 0,
                name + ": byte offset " + std::to_string(off));
  }
  return s;
}

template <typename T>
bool parse_field(std::string_view f, T& out) {
  while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
  while (!f.empty() && (f.back() == ' ' || f.back() == '\r')) f.remove_suffix(1);
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), out);
  return ec == std::errc() && ptr == f.data() + f.size();
}

EventStream parse_csv(const std::string& buf, const std::string& name) {
  EventStream s;
  std::istringstream in(buf);
  std::string line;
  std::size_t lineno = 0;
  bool have_dims = false, have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = name + ": line " + std::to_string(lineno);
    if (line[0] == '#') {
      unsigned w = 0, h = 0;
      if (std::sscanf(line.c_str(), "# width=%u height=%u", &w, &h) == 2) {
        s.width = w;
        s.height = h;
        have_dims = true;
      }
      continue;
    }
    if (!have_header) {
      if (line != "t_us,x,y,p") throw Error(where + ": expected header t_us,x,y,p");
      have_header = true;
      continue;
    }
    std::string_view v(line);
    std::string_view f[4];
    for (int i = 0; i < 4; ++i) {
      const std::size_t c = v.find(',');
      if ((i < 3) == (c == std::string_view::npos)) throw Error(where + ": expected 4 fields");
      f[i] = v.substr(0, c);
      v = i < 3 ? v.substr(c + 1) : std::string_view();
    }
    std::uint64_t t;
    unsigned x, y;
    int p;
    if (!parse_field(f[0], t) || !parse_field(f[1], x) || !parse_field(f[2], y) ||
        !parse_field(f[3], p)) {
      throw Error(where + ": malformed field");
    }
    if (x > 0xffff || y > 0xffff) throw Error(where + ": coordinate exceeds 16 bits");
    if (p != 1 && p != -1) throw Error(where + ": polarity " + std::to_string(p) + " not in {-1,+1}");
    s.events.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                        static_cast<std::int8_t>(p)});
  }
  if (!have_header) throw Error(name + ": missing header t_us,x,y,p");
  if (!have_dims) {
    for (const Event& e : s.events) {
      s.width = std::max<std::uint32_t>(s.width, e.x + 1u);
      s.height = std::max<std::uint32_t>(s.height, e.y + 1u);
    }
  }
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    check_event(s.events[i], s, i ? s.events[i - 1].t : 0, i > 0,
                name + ": event " + std::to_string(i));
  }
  return s;
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace

void validate(const EventStream& s) {
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    check_event(s.events[i], s, i ? s.events[i - 1].t : 0, i > 0, "event " + std::to_string(i));
  }
}

EventStream parse_events(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() >= 4 && buf.compare(0, 4, "EVT1") == 0) return parse_evt1(buf, path.string());
  if (!buf.empty() && buf[0] != 't' && buf[0] != '#') {
    throw Error(path.string() + ": byte offset 0: bad magic (expected EVT1 or CSV header)");
  }
  return parse_csv(buf, path.string());
}

void write_evt1(const EventStream& s, const std::filesystem::path& path) {
  validate(s);
  std::string buf = "EVT1";
  buf.reserve(kHeaderBytes + s.events.size() * kRecordBytes);
  store(buf, s.width);
  store(buf, s.height);
  store(buf, static_cast<std::uint64_t>(s.events.size()));
  for (const Event& e : s.events) {
    store(buf, e.t);
    store(buf, e.x);
    store(buf, e.y);
    store(buf, e.p);
  }
  write_file(path, buf);
}

void write_events_csv(const EventStream& s, const std::filesystem::path& path) {
  validate(s);
  std::string buf = "# width=" + std::to_string(s.width) + " height=" + std::to_string(s.height) +
                    "\nt_us,x,y,p\n";
  for (const Event& e : s.events) {
    buf += std::to_string(e.t) + ',' + std::to_string(e.x) + ',' + std::to_string(e.y) + ',' +
           std::to_string(static_cast<int>(e.p)) + '\n';
  }
  write_file(path, buf);
}

EventStream slice_events(const EventStream& s, std::uint64_t t0, std::uint64_t t1) {
  EventStream out{s.width, s.height, {}};
  auto lo = std::lower_bound(s.events.begin(), s.events.end(), t0,
                             [](const Event& e, std::uint64_t t) { return e.t < t; });
  auto hi = std::upper_bound(lo, s.events.end(), t1,
                             [](std::uint64_t t, const Event& e) { return t < e.t; });
  out.events.assign(lo, hi);
  return out;
}

std::vector<EventWindow> window_events(const EventStream& s, std::uint64_t t0, std::uint64_t t1,
                                       long N) {
  if (N <= 0) throw Error("window_events: N must be positive, got " + std::to_string(N));
  if (t1 <= t0) throw Error("window_events: empty time range");
  const std::uint64_t span = t1 - t0;
  const auto n = static_cast<std::uint64_t>(N);
  std::vector<EventWindow> out(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    out[i].events.width = s.width;
    out[i].events.height = s.height;
    // First integer timestamp at or after the rational edge t0 + i*span/N.
    out[i].t_start = t0 + (i * span + n - 1) / n;
    out[i].t_end = t0 + ((i + 1) * span + n - 1) / n;
  }
  for (const Event& e : slice_events(s, t0, t1).events) {
    // Window index floor((t - t0) * N / span); t == t1 folds into the last.
    const std::uint64_t w = std::min<std::uint64_t>((e.t - t0) * n / span, n - 1);
    out[w].events.events.push_back(e);
  }
  return out;
}

EventTensorStack build_event_frames(const std::vector<EventWindow>& windows, std::size_t B) {
  if (B == 0) throw Error("build_event_frames: B must be positive");
  if (windows.empty()) throw Error("build_event_frames: no windows");
  const std::size_t H = windows[0].events.height, W = windows[0].events.width;
  EventTensorStack st{NdArray({windows.size(), H, W, B}), {}};
  for (std::size_t n = 0; n < windows.size(); ++n) {
    const EventWindow& win = windows[n];
    st.windows.emplace_back(win.t_start, win.t_end);
    const std::uint64_t span = std::max<std::uint64_t>(win.t_end - win.t_start, 1);
    for (const Event& e : win.events.events) {
      const std::uint64_t rel = e.t > win.t_start ? e.t - win.t_start : 0;
      const std::size_t b = std::min<std::size_t>(rel * B / span, B - 1);
      st.data(n, e.y, e.x, b) += e.p;
    }
  }
  return st;
}

EventTensorStack make_event_stack(const EventStream& s, std::uint64_t t0, std::uint64_t t1,
                                  std::size_t N, std::size_t B) {
  return build_event_frames(window_events(s, t0, t1, static_cast<long>(N)), B);
}

EventTensorStack reverse_frames(const EventTensorStack& stack) {
  const std::size_t N = stack.frames();
  const std::size_t frame = stack.data.size() / N;
  EventTensorStack out{NdArray(stack.data.shape()), {}};
  for (std::size_t n = 0; n < N; ++n) {
    const double* src = stack.data.data() + (N - 1 - n) * frame;
    double* dst = out.data.data() + n * frame;
    for (std::size_t i = 0; i < frame; ++i) dst[i] = -src[i];
  }
  out.windows.assign(stack.windows.rbegin(), stack.windows.rend());
  return out;
}

NdArray build_voxel_grid(const EventStream& s, std::uint64_t t0, std::uint64_t t1, std::size_t B,
                         bool normalize) {
  if (t1 <= t0) throw Error("build_voxel_grid: empty time range");
  if (B < 2) throw Error("build_voxel_grid: B must be at least 2");
  NdArray grid({s.height, s.width, B});
  const double scale = static_cast<double>(B - 1) / static_cast<double>(t1 - t0);
  for (const Event& e : slice_events(s, t0, t1).events) {
    const double ts = scale * static_cast<double>(e.t - t0);
    const std::size_t b0 = std::min(static_cast<std::size_t>(std::floor(ts)), B - 1);
    const double frac = ts - static_cast<double>(b0);
    double* cell = grid.data() + (static_cast<std::size_t>(e.y) * s.width + e.x) * B;
    cell[b0] += e.p * (1.0 - frac);
    if (frac > 0.0 && b0 + 1 < B) cell[b0 + 1] += e.p * frac;
  }
  if (normalize) {
    double m = 0.0;
    for (double v : grid.values()) m = std::max(m, std::abs(v));
    if (m > 0.0) grid *= 1.0 / m;
  }
  return grid;
}

}  // namespace evreg
