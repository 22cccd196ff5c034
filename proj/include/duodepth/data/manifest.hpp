#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "duodepth/data/render.hpp"

namespace duodepth::data {

struct ManifestEntry {
  std::uint64_t id = 0;
  std::string split;  // "train" | "val" | "test"
  std::map<std::string, std::string> files;  // role -> relative path
};

struct Manifest {
  std::string root;
  std::string mode;  // "stereo" | "mvs"
  std::uint64_t seed = 0;
  geo::StereoRig rig;                 // stereo mode
  std::vector<geo::View> view_poses;  // mvs mode (shared across samples)
  geo::DepthBinSpec bins;             // mvs mode
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> indices(const std::string& split) const;
};

// Writes sample files plus manifest.json. Samples are rendered on the fly and
// the whole operation is deterministic in (spec, seed, count).
Manifest write_stereo_dataset(const std::string& dir, const SceneSpec& spec,
                              const PriorParams& prior, int count, double val_fraction);
Manifest write_mvs_dataset(const std::string& dir, const SceneSpec& spec,
                           const PriorParams& prior, int count, double val_fraction);

// Loads manifest.json from a dataset directory and checks that every listed
// file exists; missing files raise IoError naming the offending sample ids.
Manifest load_manifest(const std::string& dir);

StereoSample load_stereo_sample(const Manifest& m, std::size_t index);
MvsSample load_mvs_sample(const Manifest& m, std::size_t index);

}  // namespace duodepth::data
