#include "evreg/analysis/cka.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "evreg/met/met.hpp"
#include "evreg/model/train.hpp"
#include "evreg/tensor/parallel.hpp"

namespace evreg {

namespace {

// a^T b for a [n,p], b [n,q].
std::vector<double> cross(const NdArray& a, const NdArray& b) {
  const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<double> out(p * q, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* ar = a.data() + r * p;
    const double* br = b.data() + r * q;
    for (std::size_t i = 0; i < p; ++i) {
      const double ai = ar[i];
      if (ai == 0.0) continue;
      double* o = out.data() + i * q;
      for (std::size_t j = 0; j < q; ++j) o[j] += ai * br[j];
    }
  }
  return out;
}

double frob2(const std::vector<double>& m) {
  double s = 0.0;
  for (double v : m) s += v * v;
  return s;
}

}  // namespace

void center_columns(FeatureMatrix& m) {
  if (m.x.rank() != 2) throw Error("center_columns: expected [n,d]");
  const std::size_t n = m.x.dim(0), d = m.x.dim(1);
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += m.x(r, c);
  for (double& v : mean) v /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) m.x(r, c) -= mean[c];
  m.centered = true;
}

FeatureMatrix sample_features(const std::vector<NdArray>& maps, std::size_t max_rows, std::uint64_t seed) {
  if (maps.empty()) throw Error("sample_features: no feature maps");
  const Shape& s0 = maps.front().shape();
  if (s0.size() != 3) throw Error("sample_features: expected [h,w,d] maps");
  for (const NdArray& m : maps) {
    if (m.shape() != s0) throw Error("sample_features: feature maps differ in shape");
  }
  const std::size_t hw = s0[0] * s0[1], d = s0[2], total = hw * maps.size();
  std::vector<std::size_t> rows(total);
  std::iota(rows.begin(), rows.end(), 0);
  if (max_rows < total) {
    // Partial Fisher-Yates: the first max_rows slots are a uniform subset.
    Rng rng(seed);
    for (std::size_t i = 0; i < max_rows; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(rows[i], rows[pick(rng)]);
    }
    rows.resize(max_rows);
  }
  FeatureMatrix f{NdArray({rows.size(), d}), false};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* src = maps[rows[r] / hw].data() + (rows[r] % hw) * d;
    std::copy(src, src + d, f.x.data() + r * d);
  }
  center_columns(f);
  return f;
}

double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y) {
  if (x.x.rank() != 2 || y.x.rank() != 2) throw Error("linear_cka: expected [n,d] matrices");
  if (x.x.dim(0) != y.x.dim(0)) {
    throw Error("linear_cka: row count mismatch (" + std::to_string(x.x.dim(0)) + " vs " +
                std::to_string(y.x.dim(0)) + ")");
  }
  if (x.x.dim(0) < 2) throw Error("linear_cka: need at least 2 rows");
  if (!x.centered || !y.centered) throw Error("linear_cka: columns must be centred");
  const double xx = std::sqrt(frob2(cross(x.x, x.x)));
  const double yy = std::sqrt(frob2(cross(y.x, y.x)));
  if (xx == 0.0 || yy == 0.0) return 0.0;
  return frob2(cross(y.x, x.x)) / (xx * yy);
}

std::vector<CkaRow> cka_by_scene(const BrenetModel& model, const Manifest& m, std::uint64_t seed) {
  std::map<std::size_t, std::vector<std::size_t>> by_scene;
  for (std::size_t i = 0; i < m.entries.size(); ++i) by_scene[m.entries[i].scene].push_back(i);
  std::vector<std::size_t> scenes;
  for (const auto& [s, idx] : by_scene) scenes.push_back(s);

  std::vector<CkaRow> rows(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t k) {
    std::vector<NdArray> rgb, flow, met, voxel;
    for (std::size_t i : by_scene.at(scenes[k])) {
      const ModelInput in = prepare_entry(m, i, model.config());
      ModelTrace tr;
      model.forward(in, &tr);
      rgb.push_back(tr.f_i);
      flow.push_back(pool_flow(in.flows.forward.u, 4));
      voxel.push_back(ops::avg_pool(constant(in.voxel), 4).value());
      if (!tr.m_f.empty()) met.push_back(tr.m_f);
    }
    const std::uint64_t s = seed ^ scenes[k];
    const FeatureMatrix fr = sample_features(rgb, 4096, s);
    CkaRow& r = rows[k];
    r.scene = scenes[k];
    r.flow_rgb = linear_cka(sample_features(flow, 4096, s), fr);
    r.voxel_rgb = linear_cka(sample_features(voxel, 4096, s), fr);
    if (!met.empty()) r.met_rgb = linear_cka(sample_features(met, 4096, s), fr);
  });
  return rows;
}

void write_cka_csv(const std::vector<CkaRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "scene,cka_flow_rgb,cka_met_rgb,cka_voxel_rgb\n";
  for (const CkaRow& r : rows) out << r.scene << ',' << r.flow_rgb << ',' << r.met_rgb << ',' << r.voxel_rgb << '\n';
}

}  // namespace evreg
