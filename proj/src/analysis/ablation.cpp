#include "evreg/analysis/ablation.hpp"

#include <algorithm>
#include <fstream>

#include "evreg/model/train.hpp"

namespace evreg {

namespace fs = std::filesystem;

double AblationReport::median(const std::string& variant) const {
  std::vector<double> v;
  for (const AblationRow& r : rows) {
    if (r.variant == variant) v.push_back(r.miou);
  }
  if (v.empty()) throw Error("ablation: no runs of variant " + variant);
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double AblationReport::win_rate(const std::string& a, const std::string& b) const {
  std::size_t shared = 0, wins = 0;
  for (const AblationRow& ra : rows) {
    if (ra.variant != a) continue;
    for (const AblationRow& rb : rows) {
      if (rb.variant != b || rb.seed != ra.seed) continue;
      ++shared;
      if (ra.miou > rb.miou) ++wins;
    }
  }
  if (shared == 0) throw Error("ablation: " + a + " and " + b + " share no seed");
  return static_cast<double>(wins) / static_cast<double>(shared);
}

std::vector<AblationRun> ablation_layout(const fs::path& root, const std::vector<std::string>& variants,
                                         const std::vector<std::uint64_t>& seeds) {
  std::vector<AblationRun> runs;
  for (const std::string& v : variants) {
    for (std::uint64_t s : seeds) runs.push_back({v, s, root / v / ("seed" + std::to_string(s)) / "checkpoint.brn"});
  }
  return runs;
}

AblationReport ablation_harness(const Manifest& data, const std::vector<AblationRun>& runs, std::size_t val_scenes) {
  if (runs.empty()) throw Error("ablation: no runs given");
  std::string missing;
  for (const AblationRun& r : runs) {
    if (!fs::is_regular_file(r.checkpoint)) missing += "\n  " + r.checkpoint.string();
  }
  if (!missing.empty()) throw Error("ablation: missing checkpoints:" + missing);

  AblationReport rep;
  // Inputs depend on the config (frame count, flow eps), so they are
  // prepared per distinct config text.
  std::string cached_key;
  std::vector<ModelInput> val;
  for (const AblationRun& r : runs) {
    const BrenetModel model = load_checkpoint(r.checkpoint);
    if (variant_name(model.config().variant) != r.variant) {
      throw Error("ablation: " + r.checkpoint.string() + " holds variant " + variant_name(model.config().variant) +
                  ", expected " + r.variant);
    }
    ModelConfig input_cfg = model.config();
    input_cfg.variant = Variant::Full;
    input_cfg.seed = 0;
    std::string key;
    for (const auto& [k, v] : input_cfg.to_key_values()) key += k + "=" + v + ";";
    if (key != cached_key) {
      val = load_split(data, model.config(), val_scenes).val;
      cached_key = key;
    }
    if (val.empty()) throw Error("ablation: validation split is empty");
    const SegmentationScore s = evaluate(model, val);
    rep.rows.push_back({r.variant, r.seed, s.miou, s.accuracy});
  }
  for (const AblationRow& r : rep.rows) {
    const bool seen = std::any_of(rep.ordering.begin(), rep.ordering.end(),
                                  [&](const auto& o) { return o.first == r.variant; });
    if (!seen) rep.ordering.emplace_back(r.variant, rep.median(r.variant));
  }
  std::stable_sort(rep.ordering.begin(), rep.ordering.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return rep;
}

void write_ablation_csv(const AblationReport& r, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "variant,seed,miou,acc\n";
  for (const AblationRow& row : r.rows) out << row.variant << ',' << row.seed << ',' << row.miou << ',' << row.accuracy << '\n';
}

}  // namespace evreg
