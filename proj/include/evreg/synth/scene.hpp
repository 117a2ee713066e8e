#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evreg/events/events.hpp"

namespace evreg {

enum class ShapeKind { Rect, Disk };

/// A moving object. Position is the shape centre in pixels (row, column) at
/// t = 0; velocity is in px/s. With reverse_period_us > 0 the velocity flips
/// sign every period (triangle-wave path).
struct SceneObject {
  ShapeKind shape = ShapeKind::Rect;
  int class_id = 1;
  double y = 0.0, x = 0.0;
  double vy = 0.0, vx = 0.0;
  double half_h = 4.0, half_w = 4.0;  // a disk uses half_h as its radius
  double intensity = 0.8;
  double texture = 0.0;  // relative amplitude of an object-fixed pattern
  std::uint64_t reverse_period_us = 0;
};

/// Static background blob; always labelled background.
struct StaticBlob {
  ShapeKind shape = ShapeKind::Rect;
  double y = 0.0, x = 0.0;
  double half_h = 4.0, half_w = 4.0;
  double intensity = 0.8;
  double texture = 0.0;
};

struct SceneSpec {
  std::uint32_t width = 64, height = 64;
  std::uint64_t duration_us = 200000;
  std::uint64_t interval_us = 50000;
  std::vector<SceneObject> objects;  // later objects occlude earlier ones
  std::vector<StaticBlob> blobs;     // drawn below every object
  double background = 0.35;
  double background_texture = 0.0;
  double theta = 0.15;  // contrast threshold in log-intensity units
  std::uint64_t seed = 0;
  int substeps = 32;     // per interval, at least 32
  int supersample = 4;   // per axis
  double jitter_us = 0.0;
  double frame_noise = 0.0;  // std of additive frame noise, intensity units
  double frame_gain = 1.0;   // frames record clamp(gain * I + noise)
};

/// Ground truth for one interval [t_prev, t_k].
struct SceneSample {
  std::size_t index = 0;
  std::uint64_t t_prev = 0, t_k = 0;
  NdArray frame;       // [H,W] grey levels 0..255 at t_k
  EventStream events;  // events with t in [t_prev, t_k)
  /// Object index + 1 that triggered each event, 0 when none did.
  std::vector<std::uint16_t> event_source;
  NdArray flow;        // [H,W,2] (dy,dx) displacement of the object at p at t_k
  /// [H,W,2] displacement of the object behind most of p's events (lowest
  /// index on ties), else of the topmost object that swept p.
  NdArray event_flow;
  NdArray mask;        // [H,W] labels at t_k
  NdArray mask_prev;   // [H,W] labels at t_prev
  NdArray occluded;    // [H,W] 1 where p - flow(p) carried another label at t_prev
};

/// Object centre at time t (microseconds).
std::pair<double, double> object_position(const SceneObject& o, double t_us);

/// Renders every interval of the scene. Warnings (objects fully off-canvas)
/// are appended to `warnings` when given.
std::vector<SceneSample> generate_scene(const SceneSpec& spec,
                                        std::vector<std::string>* warnings = nullptr);

/// Label at continuous pixel position (y,x) at time t: the class of the
/// topmost object containing the point, else 0.
int label_at(const SceneSpec& spec, double y, double x, double t_us);

}  // namespace evreg
