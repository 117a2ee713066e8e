#include "evreg/analysis/contraction.hpp"

#include <cmath>
#include <fstream>

namespace evreg {

namespace {

double texture(double y, double x) {
  return std::sin(0.23 * x + 0.4) * std::cos(0.19 * y) + 0.5 * std::sin(0.13 * (x + y));
}

ContractionRow to_row(const std::string& name, std::size_t id, double rho, int J, const RefinementTrace& tr) {
  ContractionRow r{name, id, rho, J, tr.errors, tr.bound, tr.bound_holds, true};
  for (std::size_t j = 1; j < tr.errors.size() && j <= 3; ++j) r.decreasing = r.decreasing && tr.errors[j] < tr.errors[j - 1];
  return r;
}

}  // namespace

LkImages smooth_shifted_pair(std::size_t H, std::size_t W, double dy, double dx) {
  LkImages im{NdArray({H, W}), NdArray({H, W})};
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      im.a(y, x) = texture(fy, fx);
      im.b(y, x) = texture(fy - dy, fx - dx);
    }
  }
  return im;
}

std::vector<ContractionRow> contraction_sweep(const DatasetSpec& ds, std::uint64_t seed) {
  std::vector<ContractionRow> rows;
  const std::vector<SceneSample> scene = generate_scene(make_scene_spec(ds, 0));
  if (scene.size() < 2) throw Error("contraction_sweep: need at least two intervals");
  const NdArray& u_prev = scene[0].flow;
  const NdArray& u_gt = scene[1].flow;
  const double dt = static_cast<double>(scene[1].t_k - scene[1].t_prev) * 1e-6;
  // Smallest L with |u_gt - u_prev| <= L dt everywhere.
  double change = 0.0;
  for (std::size_t p = 0; p < u_gt.size() / 2; ++p) {
    change = std::max(change, std::hypot(u_gt[2 * p] - u_prev[2 * p], u_gt[2 * p + 1] - u_prev[2 * p + 1]));
  }
  const ProbeInput in{u_gt, u_prev, dt, {}};
  std::size_t id = 0;
  for (double rho : {0.3, 0.5, 0.8}) {
    for (int J = 1; J <= 5; ++J) {
      const RefinementTrace tr = contraction_probe(linear_refiner(u_gt, rho), in, J, 1.0, change / dt, seed);
      rows.push_back(to_row("linear", id++, rho, J, tr));
    }
  }

  const std::size_t S = 56, margin = 10;
  NdArray inner({S, S});
  for (std::size_t y = margin; y + margin < S; ++y)
    for (std::size_t x = margin; x + margin < S; ++x) inner(y, x) = 1.0;
  const double shifts[3][2] = {{0.6, -1.1}, {-0.8, 0.4}, {1.2, 0.9}};
  for (const auto& s : shifts) {
    NdArray gt({S, S, 2});
    for (std::size_t p = 0; p < S * S; ++p) {
      gt[2 * p] = s[0];
      gt[2 * p + 1] = s[1];
    }
    const RefinementTrace tr = contraction_probe(lk_refiner(smooth_shifted_pair(S, S, s[0], s[1])),
                                                 ProbeInput{gt, NdArray({S, S, 2}), 0.05, inner}, 3, 0.5,
                                                 std::hypot(s[0], s[1]) / 0.05, seed);
    rows.push_back(to_row("lk", id++, tr.rho_fit, 3, tr));
  }
  return rows;
}

void write_contraction_csv(const std::vector<ContractionRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "refiner,case,rho,J,final_error,bound,holds,decreasing\n";
  for (const ContractionRow& r : rows) {
    out << r.refiner << ',' << r.case_id << ',' << r.rho << ',' << r.J << ',' << r.errors.back() << ',' << r.bound
        << ',' << (r.holds ? 1 : 0) << ',' << (r.decreasing ? 1 : 0) << '\n';
  }
}

}  // namespace evreg
