#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evreg/synth/scene.hpp"

namespace evreg {

using KeyValues = std::map<std::string, std::string>;

/// Parses "key=value" lines; '#' starts a comment, blank lines are skipped.
KeyValues parse_key_values(const std::string& text, const std::string& context);
KeyValues read_key_values(const std::filesystem::path& path);

/// Recipe for a family of seeded scenes. Scene i is a pure function of
/// (seed, i). Moving objects carry classes 1..3; static blobs copy their
/// looks but are background.
struct DatasetSpec {
  std::size_t scenes = 12;
  std::size_t samples_per_scene = 4;
  std::uint32_t width = 64, height = 64;
  std::uint64_t interval_us = 50000;
  double speed_min = 50.0, speed_max = 200.0;  // px/s
  double theta = 0.15;
  std::size_t blobs = 2;
  double background = 0.35;
  double background_texture = 0.3;
  double frame_noise = 0.0;
  double jitter_us = 0.0;
  int substeps = 32;
  std::uint64_t seed = 0;

  static DatasetSpec from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
};

/// "default" or "small", or a path to a key=value file; `overrides` wins.
DatasetSpec load_dataset_spec(const std::string& name_or_path, const KeyValues& overrides = {});

SceneSpec make_scene_spec(const DatasetSpec& ds, std::size_t scene);

struct ManifestEntry {
  std::string frame, events, flow, mask;
  std::uint64_t t_prev = 0, t_k = 0;
  std::size_t scene = 0, index = 0;
};

struct Manifest {
  std::filesystem::path dir;
  KeyValues params;  // generator recipe, empty for hand-built scenes
  std::vector<ManifestEntry> entries;
};

/// Writes one scene's samples (frame PGM, EVT1 events, FLT1 flow, mask PGM
/// per sample) and manifest.txt. Returns the manifest path.
std::filesystem::path write_dataset(const std::vector<SceneSample>& samples,
                                    const std::filesystem::path& dir);

/// Generates every scene of `ds` into `dir`.
std::filesystem::path generate_dataset(const DatasetSpec& ds, const std::filesystem::path& dir,
                                       std::vector<std::string>* warnings = nullptr);

/// Accepts a manifest path or the directory holding manifest.txt.
Manifest read_manifest(const std::filesystem::path& path);

/// Reads the four files of an entry. Ground-truth fields that are not
/// stored on disk are left empty.
SceneSample load_sample(const Manifest& m, std::size_t i);

/// The dataset recipe stored in a manifest; throws when absent.
DatasetSpec manifest_spec(const Manifest& m);

}  // namespace evreg
