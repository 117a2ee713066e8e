#include "evreg/analysis/misalignment.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "evreg/flow/flow.hpp"
#include "evreg/tensor/parallel.hpp"

namespace evreg {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Accum {
  double w = 0.0, dy = 0.0, dx = 0.0;
  std::uint16_t source = 0;
  bool mixed = false;
};

// residual(i) -> (dy,dx) for every moving-object event.
template <class Residual>
ShiftSummary weighted_shift(const SceneSample& s, const std::vector<double>* weights, std::vector<std::string>* warnings,
                            const char* what, Residual residual) {
  const auto& ev = s.events.events;
  if (s.event_source.size() != ev.size()) throw Error(std::string(what) + ": sample has no per-event sources");
  if (weights && weights->size() != ev.size()) throw Error(std::string(what) + ": one weight per event required");
  std::map<std::size_t, Accum> pixels;
  ShiftSummary out;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (s.event_source[i] == 0) continue;
    const double w = weights ? (*weights)[i] : 1.0;
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(std::string(what) + ": weights must be finite and >= 0");
    const auto [ry, rx] = residual(i);
    Accum& a = pixels[static_cast<std::size_t>(ev[i].y) * s.events.width + ev[i].x];
    if (a.source != 0 && a.source != s.event_source[i]) a.mixed = true;
    a.source = s.event_source[i];
    a.w += w;
    a.dy += w * ry;
    a.dx += w * rx;
    ++out.events;
  }
  double sum = 0.0;
  for (const auto& [p, a] : pixels) {
    if (a.w == 0.0) continue;
    sum += std::hypot(a.dy, a.dx) / a.w;
    ++out.pixels;
    if (a.mixed) ++out.mixed;
  }
  if (out.pixels == 0) {
    if (warnings) warnings->push_back(std::string(what) + ": no moving-object events in sample " + std::to_string(s.index));
    return out;
  }
  out.mean = sum / static_cast<double>(out.pixels);
  return out;
}

// True motion of event i's source point over [t_i, t_k].
std::pair<double, double> true_motion(const SceneSpec& spec, const SceneSample& s, std::size_t i) {
  const std::size_t o = s.event_source[i] - 1;
  if (o >= spec.objects.size()) throw Error("misalignment: event source outside the scene's objects");
  const auto [y0, x0] = object_position(spec.objects[o], static_cast<double>(s.events.events[i].t));
  const auto [y1, x1] = object_position(spec.objects[o], static_cast<double>(s.t_k));
  return {y1 - y0, x1 - x0};
}

}  // namespace

ShiftSummary fusion_shift(const SceneSpec& spec, const SceneSample& s, const std::vector<double>* weights,
                          std::vector<std::string>* warnings) {
  return weighted_shift(s, weights, warnings, "fusion_shift",
                        [&](std::size_t i) { return true_motion(spec, s, i); });
}

ShiftSummary registration_shift(const SceneSpec& spec, const SceneSample& s, double eps, std::uint64_t seed,
                                const std::vector<double>* weights, std::vector<std::string>* warnings) {
  if (s.t_k <= s.t_prev) throw Error("registration_shift: empty interval");
  if (s.event_flow.empty()) throw Error("registration_shift: sample has no swept-pixel flow");
  const FlowPair flows = provide_flow_gt_noisy(s.event_flow, s.t_prev, s.t_k, eps, seed);
  const NdArray& u = flows.forward.u;
  const double span = static_cast<double>(s.t_k - s.t_prev);
  return weighted_shift(s, weights, warnings, "registration_shift", [&](std::size_t i) {
    const Event& e = s.events.events[i];
    const double frac = static_cast<double>(s.t_k - e.t) / span;
    const auto [ty, tx] = true_motion(spec, s, i);
    return std::pair{frac * u(e.y, e.x, 0) - ty, frac * u(e.y, e.x, 1) - tx};
  });
}

MisalignmentReport measure_misalignment(const DatasetSpec& ds, double eps, std::uint64_t seed) {
  if (!(eps >= 0.0)) throw Error("measure_misalignment: eps must be >= 0");
  std::vector<std::vector<MisalignmentRow>> per_scene(ds.scenes);
  std::vector<std::vector<std::string>> warn(ds.scenes);
  parallel_for(ds.scenes, [&](std::size_t sc) {
    const SceneSpec spec = make_scene_spec(ds, sc);
    for (const SceneSample& s : generate_scene(spec)) {
      MisalignmentRow r;
      r.scene = sc;
      r.index = s.index;
      const ShiftSummary f = fusion_shift(spec, s, nullptr, &warn[sc]);
      const ShiftSummary g = registration_shift(spec, s, eps, splitmix(seed ^ splitmix(sc * 1000003ULL + s.index)));
      r.delta_fuse = f.mean;
      r.delta_reg = g.mean;
      r.pixels = f.pixels;
      per_scene[sc].push_back(r);
    }
  });
  MisalignmentReport rep;
  rep.eps = eps;
  std::size_t counted = 0;
  for (std::size_t sc = 0; sc < ds.scenes; ++sc) {
    for (const MisalignmentRow& r : per_scene[sc]) {
      rep.rows.push_back(r);
      if (r.pixels == 0) continue;
      rep.delta_fuse += r.delta_fuse;
      rep.delta_reg += r.delta_reg;
      ++counted;
    }
    for (auto& w : warn[sc]) rep.warnings.push_back("scene " + std::to_string(sc) + ": " + w);
  }
  if (counted > 0) {
    rep.delta_fuse /= static_cast<double>(counted);
    rep.delta_reg /= static_cast<double>(counted);
  }
  return rep;
}

std::vector<MisalignmentRow> scene_means(const MisalignmentReport& r) {
  std::map<std::size_t, MisalignmentRow> acc;
  for (const MisalignmentRow& row : r.rows) {
    MisalignmentRow& a = acc[row.scene];
    a.scene = row.scene;
    if (row.pixels == 0) continue;
    a.delta_fuse += row.delta_fuse;
    a.delta_reg += row.delta_reg;
    ++a.index;  // sample count until the division below
    a.pixels += row.pixels;
  }
  std::vector<MisalignmentRow> out;
  for (auto& [sc, a] : acc) {
    if (a.index > 0) {
      a.delta_fuse /= static_cast<double>(a.index);
      a.delta_reg /= static_cast<double>(a.index);
    }
    a.index = 0;
    out.push_back(a);
  }
  return out;
}

void write_misalignment_csv(const MisalignmentReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "sample,delta_fuse,delta_reg,eps\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    out << i << ',' << r.rows[i].delta_fuse << ',' << r.rows[i].delta_reg << ',' << r.eps << '\n';
  }
}

}  // namespace evreg
