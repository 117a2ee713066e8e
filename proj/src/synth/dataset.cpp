#include "evreg/synth/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "evreg/events/formats.hpp"

namespace evreg {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
void get(const KeyValues& kv, const char* key, T& out) {
  auto it = kv.find(key);
  if (it == kv.end()) return;
  std::istringstream in(it->second);
  T v;
  if (!(in >> v) || !(in >> std::ws).eof()) {
    throw Error(std::string("dataset spec: bad value for ") + key + ": " + it->second);
  }
  out = v;
}

template <typename T>
std::string fmt(T v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

// Looks of the three classes; blobs reuse them.
struct Look {
  ShapeKind shape;
  double size_lo, size_hi, int_lo, int_hi, texture;
};

constexpr Look kLooks[3] = {
    {ShapeKind::Rect, 5.0, 8.0, 0.75, 0.95, 0.0},
    {ShapeKind::Disk, 5.0, 8.0, 0.04, 0.15, 0.0},
    {ShapeKind::Rect, 4.0, 6.5, 0.50, 0.65, 0.5},
};

std::string sample_stem(std::size_t scene, std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%03zu_k%02zu", scene, k);
  return buf;
}

void write_samples(const std::vector<SceneSample>& samples, const fs::path& dir, std::size_t scene,
                   std::vector<ManifestEntry>& entries) {
  for (const SceneSample& s : samples) {
    const std::string stem = sample_stem(scene, s.index);
    ManifestEntry e{stem + "_frame.pgm", stem + "_events.evt", stem + "_flow.flt",
                    stem + "_mask.pgm", s.t_prev, s.t_k, scene, s.index};
    write_pgm(dir / e.frame, s.frame);
    write_evt1(s.events, dir / e.events);
    write_flt1(dir / e.flow, s.flow);
    write_pgm(dir / e.mask, s.mask);
    entries.push_back(std::move(e));
  }
}

fs::path write_manifest(const fs::path& dir, const KeyValues& params,
                        const std::vector<ManifestEntry>& entries) {
  const fs::path path = dir / "manifest.txt";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "# evreg dataset v1\n";
  for (const auto& [k, v] : params) out << "# " << k << '=' << v << '\n';
  out << "# frame events flow mask t_prev t_k scene index\n";
  for (const ManifestEntry& e : entries) {
    out << e.frame << ' ' << e.events << ' ' << e.flow << ' ' << e.mask << ' ' << e.t_prev << ' '
        << e.t_k << ' ' << e.scene << ' ' << e.index << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
  return path;
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& context) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(context + ": line " + std::to_string(n) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

DatasetSpec DatasetSpec::from_key_values(const KeyValues& kv) {
  static const char* known[] = {"scenes", "samples_per_scene", "width", "height", "interval_us",
                                "speed_min", "speed_max", "theta", "blobs", "background",
                                "background_texture", "frame_noise", "jitter_us", "substeps", "seed"};
  for (const auto& [k, v] : kv) {
    if (std::find(std::begin(known), std::end(known), k) == std::end(known)) {
      throw Error("dataset spec: unknown key " + k);
    }
  }
  DatasetSpec d;
  get(kv, "scenes", d.scenes);
  get(kv, "samples_per_scene", d.samples_per_scene);
  get(kv, "width", d.width);
  get(kv, "height", d.height);
  get(kv, "interval_us", d.interval_us);
  get(kv, "speed_min", d.speed_min);
  get(kv, "speed_max", d.speed_max);
  get(kv, "theta", d.theta);
  get(kv, "blobs", d.blobs);
  get(kv, "background", d.background);
  get(kv, "background_texture", d.background_texture);
  get(kv, "frame_noise", d.frame_noise);
  get(kv, "jitter_us", d.jitter_us);
  get(kv, "substeps", d.substeps);
  get(kv, "seed", d.seed);
  if (d.scenes == 0 && d.samples_per_scene == 0) throw Error("dataset spec: nothing to generate");
  if (d.speed_min < 0 || d.speed_max < d.speed_min) throw Error("dataset spec: bad speed range");
  return d;
}

KeyValues DatasetSpec::to_key_values() const {
  return {{"scenes", fmt(scenes)},
          {"samples_per_scene", fmt(samples_per_scene)},
          {"width", fmt(width)},
          {"height", fmt(height)},
          {"interval_us", fmt(interval_us)},
          {"speed_min", fmt(speed_min)},
          {"speed_max", fmt(speed_max)},
          {"theta", fmt(theta)},
          {"blobs", fmt(blobs)},
          {"background", fmt(background)},
          {"background_texture", fmt(background_texture)},
          {"frame_noise", fmt(frame_noise)},
          {"jitter_us", fmt(jitter_us)},
          {"substeps", fmt(substeps)},
          {"seed", fmt(seed)}};
}

DatasetSpec load_dataset_spec(const std::string& name_or_path, const KeyValues& overrides) {
  KeyValues kv;
  if (name_or_path == "default") {
    // defaults of DatasetSpec
  } else if (name_or_path == "small") {
    kv = {{"scenes", "2"}, {"samples_per_scene", "2"}, {"width", "32"}, {"height", "32"}};
  } else {
    kv = read_key_values(name_or_path);
  }
  for (const auto& [k, v] : overrides) kv[k] = v;
  return DatasetSpec::from_key_values(kv);
}

SceneSpec make_scene_spec(const DatasetSpec& ds, std::size_t scene) {
  std::seed_seq seq{static_cast<std::uint32_t>(ds.seed), static_cast<std::uint32_t>(ds.seed >> 32),
                    static_cast<std::uint32_t>(scene), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };

  SceneSpec s;
  s.width = ds.width;
  s.height = ds.height;
  s.interval_us = ds.interval_us;
  s.duration_us = ds.interval_us * ds.samples_per_scene;
  s.background = ds.background;
  s.background_texture = ds.background_texture;
  s.theta = ds.theta;
  s.substeps = ds.substeps;
  s.jitter_us = ds.jitter_us;
  s.frame_noise = ds.frame_noise;
  s.seed = ds.seed * 7919 + scene;

  const double W = ds.width, H = ds.height;
  const double T = static_cast<double>(s.duration_us) * 1e-6;
  const double margin = std::min(W, H) * 0.2;

  int order[3] = {0, 1, 2};
  std::shuffle(std::begin(order), std::end(order), rng);
  for (int c : order) {
    const Look& look = kLooks[c];
    SceneObject o;
    o.shape = look.shape;
    o.class_id = c + 1;
    o.half_h = uni(look.size_lo, look.size_hi);
    o.half_w = look.shape == ShapeKind::Disk ? o.half_h : uni(look.size_lo, look.size_hi);
    o.intensity = uni(look.int_lo, look.int_hi);
    o.texture = look.texture;
    const double speed = uni(ds.speed_min, ds.speed_max);
    const double ang = uni(0.0, 2.0 * std::numbers::pi);
    o.vy = speed * std::sin(ang);
    o.vx = speed * std::cos(ang);
    // Centre of the path is uniform inside the margin box.
    const double my = uni(margin, H - margin), mx = uni(margin, W - margin);
    o.y = my - o.vy * T / 2;
    o.x = mx - o.vx * T / 2;
    s.objects.push_back(o);
  }
  for (std::size_t b = 0; b < ds.blobs; ++b) {
    const Look& look = kLooks[rng() % 3];
    StaticBlob bl;
    bl.shape = look.shape;
    bl.half_h = uni(look.size_lo, look.size_hi);
    bl.half_w = look.shape == ShapeKind::Disk ? bl.half_h : uni(look.size_lo, look.size_hi);
    bl.intensity = uni(look.int_lo, look.int_hi);
    bl.texture = look.texture;
    bl.y = uni(margin * 0.5, H - margin * 0.5);
    bl.x = uni(margin * 0.5, W - margin * 0.5);
    s.blobs.push_back(bl);
  }
  return s;
}

fs::path write_dataset(const std::vector<SceneSample>& samples, const fs::path& dir) {
  prepare_dir(dir);
  std::vector<ManifestEntry> entries;
  write_samples(samples, dir, 0, entries);
  return write_manifest(dir, {}, entries);
}

fs::path generate_dataset(const DatasetSpec& ds, const fs::path& dir,
                          std::vector<std::string>* warnings) {
  prepare_dir(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t sc = 0; sc < ds.scenes; ++sc) {
    std::vector<std::string> w;
    const auto samples = generate_scene(make_scene_spec(ds, sc), &w);
    if (warnings) {
      for (auto& m : w) warnings->push_back("scene " + std::to_string(sc) + ": " + m);
    }
    write_samples(samples, dir, sc, entries);
  }
  return write_manifest(dir, ds.to_key_values(), entries);
}

Manifest read_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.txt" : path;
  std::ifstream in(file);
  if (!in) throw Error("cannot open manifest " + file.string());
  Manifest m;
  m.dir = file.parent_path();
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos) m.params[trim(line.substr(1, eq - 1))] = trim(line.substr(eq + 1));
      continue;
    }
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.frame >> e.events >> e.flow >> e.mask >> e.t_prev >> e.t_k >> e.scene >> e.index)) {
      throw Error(file.string() + ": line " + std::to_string(n) + ": malformed entry");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

SceneSample load_sample(const Manifest& m, std::size_t i) {
  if (i >= m.entries.size()) throw Error("load_sample: index out of range");
  const ManifestEntry& e = m.entries[i];
  SceneSample s;
  s.index = e.index;
  s.t_prev = e.t_prev;
  s.t_k = e.t_k;
  s.frame = read_pgm(m.dir / e.frame);
  s.events = parse_events(m.dir / e.events);
  s.flow = read_flt1(m.dir / e.flow);
  s.mask = read_pgm(m.dir / e.mask);
  if (s.flow.dim(0) != s.frame.dim(0) || s.flow.dim(1) != s.frame.dim(1) || s.flow.dim(2) != 2) {
    throw Error(e.flow + ": flow grid does not match frame");
  }
  return s;
}

DatasetSpec manifest_spec(const Manifest& m) {
  if (m.params.empty()) throw Error(m.dir.string() + ": manifest carries no generator recipe");
  return DatasetSpec::from_key_values(m.params);
}

}  // namespace evreg
