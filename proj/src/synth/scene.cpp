#include "evreg/synth/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace evreg {
namespace {

constexpr double kLogEps = 1e-3;
constexpr double kTexturePeriod = 6.0;

bool inside(ShapeKind shape, double dy, double dx, double hh, double hw) {
  if (shape == ShapeKind::Disk) return dy * dy + dx * dx < hh * hh;
  return std::abs(dy) < hh && std::abs(dx) < hw;
}

double texture_gain(double texture, double dy, double dx) {
  if (texture == 0.0) return 1.0;
  const double w = 2.0 * std::numbers::pi / kTexturePeriod;
  return 1.0 + texture * std::sin(w * dx) * std::sin(w * dy);
}

struct Background {
  double base, amp;
  double phase[3];

  Background(const SceneSpec& spec) : base(spec.background), amp(spec.background_texture) {
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    for (double& p : phase) p = u(rng);
  }

  double operator()(double y, double x) const {
    if (amp == 0.0) return base;
    const double two_pi = 2.0 * std::numbers::pi;
    const double s = std::sin(two_pi * x / 23.0 + phase[0]) * std::cos(two_pi * y / 17.0 + phase[1]) +
                     std::sin(two_pi * (x + y) / 31.0 + phase[2]);
    return base * (1.0 + 0.5 * amp * s);
  }
};

// Index of the topmost object containing (y,x) at the given positions, or -1.
int object_index_at(const SceneSpec& spec, const std::vector<std::pair<double, double>>& pos,
                    double y, double x) {
  for (int i = static_cast<int>(spec.objects.size()) - 1; i >= 0; --i) {
    const SceneObject& o = spec.objects[static_cast<std::size_t>(i)];
    if (inside(o.shape, y - pos[static_cast<std::size_t>(i)].first,
               x - pos[static_cast<std::size_t>(i)].second, o.half_h, o.half_w)) {
      return i;
    }
  }
  return -1;
}

std::vector<std::pair<double, double>> positions(const SceneSpec& spec, double t) {
  std::vector<std::pair<double, double>> pos;
  for (const SceneObject& o : spec.objects) pos.push_back(object_position(o, t));
  return pos;
}

struct Render {
  NdArray intensity;           // [H,W] anti-aliased
  std::vector<int> owner;      // topmost object touching any sub-sample, -1 if none
};

// Background and blobs never move: their sub-sample values are computed once.
class Renderer {
 public:
  explicit Renderer(const SceneSpec& spec) : spec_(spec), ss_(spec.supersample) {
    const Background bg(spec);
    const std::size_t H = spec.height, W = spec.width, S = static_cast<std::size_t>(ss_ * ss_);
    sub_.resize(H * W * S);
    pixel_.resize(H * W);
    for (std::size_t py = 0; py < H; ++py) {
      for (std::size_t px = 0; px < W; ++px) {
        double acc = 0.0;
        for (int sy = 0; sy < ss_; ++sy) {
          for (int sx = 0; sx < ss_; ++sx) {
            const double y = sub_coord(py, sy), x = sub_coord(px, sx);
            double v = bg(y, x);
            for (auto it = spec.blobs.rbegin(); it != spec.blobs.rend(); ++it) {
              if (inside(it->shape, y - it->y, x - it->x, it->half_h, it->half_w)) {
                v = it->intensity * texture_gain(it->texture, y - it->y, x - it->x);
                break;
              }
            }
            sub_[(py * W + px) * S + static_cast<std::size_t>(sy * ss_ + sx)] = v;
            acc += v;
          }
        }
        pixel_[py * W + px] = acc / static_cast<double>(S);
      }
    }
  }

  Render operator()(double t) const {
    const std::size_t H = spec_.height, W = spec_.width, S = static_cast<std::size_t>(ss_ * ss_);
    const auto pos = positions(spec_, t);
    Render r{NdArray({H, W}), std::vector<int>(H * W, -1)};
    std::vector<std::vector<int>> cover(H * W);
    for (std::size_t i = 0; i < spec_.objects.size(); ++i) {
      const SceneObject& o = spec_.objects[i];
      const double ext_y = o.half_h + 1.0;
      const double ext_x = (o.shape == ShapeKind::Disk ? o.half_h : o.half_w) + 1.0;
      const long y0 = std::max(0L, static_cast<long>(std::floor(pos[i].first - ext_y)));
      const long y1 = std::min(static_cast<long>(H) - 1, static_cast<long>(std::ceil(pos[i].first + ext_y)));
      const long x0 = std::max(0L, static_cast<long>(std::floor(pos[i].second - ext_x)));
      const long x1 = std::min(static_cast<long>(W) - 1, static_cast<long>(std::ceil(pos[i].second + ext_x)));
      for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) cover[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)].push_back(static_cast<int>(i));
      }
    }
    for (std::size_t py = 0; py < H; ++py) {
      for (std::size_t px = 0; px < W; ++px) {
        const std::size_t p = py * W + px;
        if (cover[p].empty()) {
          r.intensity[p] = pixel_[p];
          continue;
        }
        double acc = 0.0;
        int owner = -1;
        for (int sy = 0; sy < ss_; ++sy) {
          for (int sx = 0; sx < ss_; ++sx) {
            const double y = sub_coord(py, sy), x = sub_coord(px, sx);
            double v = sub_[p * S + static_cast<std::size_t>(sy * ss_ + sx)];
            for (auto it = cover[p].rbegin(); it != cover[p].rend(); ++it) {
              const SceneObject& o = spec_.objects[static_cast<std::size_t>(*it)];
              const auto& c = pos[static_cast<std::size_t>(*it)];
              if (inside(o.shape, y - c.first, x - c.second, o.half_h, o.half_w)) {
                v = o.intensity * texture_gain(o.texture, y - c.first, x - c.second);
                owner = std::max(owner, *it);
                break;
              }
            }
            acc += v;
          }
        }
        r.intensity[p] = std::max(acc / static_cast<double>(S), 0.0);
        r.owner[p] = owner;
      }
    }
    return r;
  }

 private:
  // Sub-sample centres inside the unit pixel centred on the pixel index.
  double sub_coord(std::size_t p, int s) const {
    return static_cast<double>(p) - 0.5 + (s + 0.5) / ss_;
  }

  const SceneSpec& spec_;
  int ss_;
  std::vector<double> sub_;
  std::vector<double> pixel_;
};

struct RawEvent {
  double t;
  std::uint16_t x, y;
  std::int8_t p;
  std::uint16_t src;
};

void check_spec(const SceneSpec& spec) {
  if (spec.width == 0 || spec.height == 0) throw Error("scene: empty canvas");
  if (spec.width > 0xffff || spec.height > 0xffff) throw Error("scene: canvas exceeds 16-bit coordinates");
  if (spec.interval_us == 0 || spec.duration_us < spec.interval_us) {
    throw Error("scene: duration must cover at least one interval");
  }
  if (!(spec.theta > 0.0)) throw Error("scene: contrast threshold must be positive");
  if (spec.substeps < 32) throw Error("scene: at least 32 sub-steps per interval are required");
  if (spec.supersample < 1) throw Error("scene: supersample must be >= 1");
  std::vector<int> ids;
  for (const SceneObject& o : spec.objects) {
    if (o.class_id < 1) throw Error("scene: class ids must be >= 1");
    if (!std::isfinite(o.vx) || !std::isfinite(o.vy)) throw Error("scene: non-finite velocity");
    if (std::find(ids.begin(), ids.end(), o.class_id) != ids.end()) {
      throw Error("scene: class id " + std::to_string(o.class_id) + " used by two objects");
    }
    ids.push_back(o.class_id);
  }
}

}  // namespace

std::pair<double, double> object_position(const SceneObject& o, double t_us) {
  double s = t_us;
  if (o.reverse_period_us > 0) {
    const double P = static_cast<double>(o.reverse_period_us);
    const double m = std::fmod(t_us, 2.0 * P);
    s = m < P ? m : 2.0 * P - m;
  }
  return {o.y + o.vy * s * 1e-6, o.x + o.vx * s * 1e-6};
}

int label_at(const SceneSpec& spec, double y, double x, double t_us) {
  const int i = object_index_at(spec, positions(spec, t_us), y, x);
  return i < 0 ? 0 : spec.objects[static_cast<std::size_t>(i)].class_id;
}

std::vector<SceneSample> generate_scene(const SceneSpec& spec, std::vector<std::string>* warnings) {
  check_spec(spec);
  const std::size_t H = spec.height, W = spec.width, P = H * W;
  const Renderer render(spec);
  const std::size_t K = spec.duration_us / spec.interval_us;
  const double dt = static_cast<double>(spec.interval_us) / spec.substeps;
  std::mt19937_64 jitter_rng(spec.seed * 2654435761ull + 17);
  std::normal_distribution<double> jitter(0.0, std::max(spec.jitter_us, 0.0));

  Render prev = render(0.0);
  std::vector<double> ref(P), last(P);
  for (std::size_t i = 0; i < P; ++i) ref[i] = last[i] = std::log(prev.intensity[i] + kLogEps);

  std::vector<RawEvent> all;
  std::vector<std::vector<int>> swept_owner(K, std::vector<int>(P, -1));
  std::vector<Render> frames;
  frames.reserve(K);

  for (std::size_t k = 0; k < K; ++k) {
    const double t_begin = static_cast<double>(k * spec.interval_us);
    std::vector<int>& swept = swept_owner[k];
    for (std::size_t i = 0; i < P; ++i) swept[i] = prev.owner[i];
    for (int s = 1; s <= spec.substeps; ++s) {
      const double t0 = t_begin + (s - 1) * dt;
      Render cur = render(t_begin + s * dt);
      std::vector<RawEvent> step;
      for (std::size_t i = 0; i < P; ++i) {
        const double l0 = last[i];
        const double l1 = std::log(cur.intensity[i] + kLogEps);
        swept[i] = std::max(swept[i], cur.owner[i]);
        const int src = std::max(cur.owner[i], prev.owner[i]) + 1;
        const auto y = static_cast<std::uint16_t>(i / W), x = static_cast<std::uint16_t>(i % W);
        // Emit one event per threshold multiple crossed since the pixel's
        // last event, at the linearly interpolated crossing time.
        while (l1 - ref[i] >= spec.theta) {
          ref[i] += spec.theta;
          step.push_back({t0 + (ref[i] - l0) / (l1 - l0) * dt, x, y, 1, static_cast<std::uint16_t>(src)});
        }
        while (ref[i] - l1 >= spec.theta) {
          ref[i] -= spec.theta;
          step.push_back({t0 + (ref[i] - l0) / (l1 - l0) * dt, x, y, -1, static_cast<std::uint16_t>(src)});
        }
        last[i] = l1;
      }
      std::sort(step.begin(), step.end(), [](const RawEvent& a, const RawEvent& b) {
        if (a.t != b.t) return a.t < b.t;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
      });
      all.insert(all.end(), step.begin(), step.end());
      prev = std::move(cur);
    }
    frames.push_back(prev);
  }

  if (spec.jitter_us > 0.0) {
    for (RawEvent& e : all) {
      e.t = std::clamp(e.t + jitter(jitter_rng), 0.0, static_cast<double>(K * spec.interval_us));
    }
    std::stable_sort(all.begin(), all.end(), [](const RawEvent& a, const RawEvent& b) { return a.t < b.t; });
  }

  std::vector<SceneSample> samples(K);
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < K; ++k) {
    SceneSample& smp = samples[k];
    smp.index = k;
    smp.t_prev = k * spec.interval_us;
    smp.t_k = (k + 1) * spec.interval_us;
    smp.events = EventStream{spec.width, spec.height, {}};
    const bool last_interval = k + 1 == K;
    for (; cursor < all.size(); ++cursor) {
      const std::uint64_t t = static_cast<std::uint64_t>(std::llround(all[cursor].t));
      if (t >= smp.t_k && !last_interval) break;
      const RawEvent& e = all[cursor];
      smp.events.events.push_back({std::max(t, smp.t_prev), e.x, e.y, e.p});
      smp.event_source.push_back(e.src);
    }

    std::mt19937_64 noise_rng(spec.seed * 1000003ull + k);
    std::normal_distribution<double> noise(0.0, std::max(spec.frame_noise, 0.0));
    smp.frame = NdArray({H, W});
    for (std::size_t i = 0; i < P; ++i) {
      double v = spec.frame_gain * frames[k].intensity[i];
      if (spec.frame_noise > 0.0) v += noise(noise_rng);
      smp.frame[i] = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }

    const auto pos_prev = positions(spec, static_cast<double>(smp.t_prev));
    const auto pos_k = positions(spec, static_cast<double>(smp.t_k));
    std::vector<std::pair<double, double>> disp(spec.objects.size());
    for (std::size_t o = 0; o < disp.size(); ++o) {
      disp[o] = {static_cast<float>(pos_k[o].first - pos_prev[o].first),
                 static_cast<float>(pos_k[o].second - pos_prev[o].second)};
    }
    // Per pixel, the object behind most of its events this interval; pixels
    // without object events fall back to the topmost object that swept them.
    std::vector<int> event_owner(P, -1);
    {
      std::vector<std::uint32_t> counts(P * (spec.objects.size() + 1), 0);
      for (std::size_t j = 0; j < smp.events.events.size(); ++j) {
        const Event& e = smp.events.events[j];
        ++counts[(static_cast<std::size_t>(e.y) * W + e.x) * (spec.objects.size() + 1) + smp.event_source[j]];
      }
      for (std::size_t i = 0; i < P; ++i) {
        std::uint32_t best = 0;
        for (std::size_t o = 1; o <= spec.objects.size(); ++o) {
          const std::uint32_t c = counts[i * (spec.objects.size() + 1) + o];
          if (c > best) {
            best = c;
            event_owner[i] = static_cast<int>(o) - 1;
          }
        }
        if (best == 0) event_owner[i] = swept_owner[k][i];
      }
    }
    smp.flow = NdArray({H, W, 2});
    smp.event_flow = NdArray({H, W, 2});
    smp.mask = NdArray({H, W});
    smp.mask_prev = NdArray({H, W});
    smp.occluded = NdArray({H, W});
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t i = y * W + x;
        const double fy = static_cast<double>(y), fx = static_cast<double>(x);
        const int ok = object_index_at(spec, pos_k, fy, fx);
        const int op = object_index_at(spec, pos_prev, fy, fx);
        smp.mask[i] = ok < 0 ? 0 : spec.objects[static_cast<std::size_t>(ok)].class_id;
        smp.mask_prev[i] = op < 0 ? 0 : spec.objects[static_cast<std::size_t>(op)].class_id;
        double uy = 0.0, ux = 0.0;
        if (ok >= 0) std::tie(uy, ux) = disp[static_cast<std::size_t>(ok)];
        smp.flow[2 * i] = uy;
        smp.flow[2 * i + 1] = ux;
        const int sw = event_owner[i];
        if (sw >= 0) {
          smp.event_flow[2 * i] = disp[static_cast<std::size_t>(sw)].first;
          smp.event_flow[2 * i + 1] = disp[static_cast<std::size_t>(sw)].second;
        }
        const int src = object_index_at(spec, pos_prev, fy - uy, fx - ux);
        const int src_label = src < 0 ? 0 : spec.objects[static_cast<std::size_t>(src)].class_id;
        smp.occluded[i] = src_label != static_cast<int>(smp.mask[i]) ? 1.0 : 0.0;
      }
    }

    if (warnings) {
      for (std::size_t o = 0; o < spec.objects.size(); ++o) {
        const SceneObject& ob = spec.objects[o];
        const auto [cy, cx] = pos_k[o];
        if (cy + ob.half_h < -0.5 || cy - ob.half_h > H - 0.5 || cx + ob.half_w < -0.5 ||
            cx - ob.half_w > W - 0.5) {
          warnings->push_back("sample " + std::to_string(k) + ": object " + std::to_string(o) +
                              " (class " + std::to_string(ob.class_id) + ") left the canvas");
        }
      }
    }
  }
  return samples;
}

}  // namespace evreg
