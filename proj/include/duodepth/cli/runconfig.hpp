#pragma once

#include <string>

#include "json.hpp"

#include "duodepth/data/render.hpp"
#include "duodepth/model/config.hpp"
#include "duodepth/train/trainer.hpp"

namespace duodepth::cli {

struct DataConfig {
  int width = 128, height = 64;
  int planes = 4, boxes = 2;
  double textureless_fraction = 0.25;
  double fx = 0, fy = 0, cx = -1, cy = -1;  // <=0 / <0: derived from image size
  double baseline = 0;                      // 0: derived (disparities stay under 48 px)
  double depth_min = 0, depth_max = 0;
  int views = 3;
  geo::DepthBinSpec bins{0, 0, 0};
  double val_fraction = 0.1;
  data::PriorParams prior;

  data::SceneSpec scene_spec(std::uint64_t seed) const;
};

struct EvalConfig {
  std::string split = "val";
  std::string regions;  // comma list: edge,textureless
  bool depth_metrics = false;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "run";
  std::string data_dir;
  std::string resume;
  DataConfig data;
  model::ModelConfig model;
  train::TrainConfig train;
  EvalConfig eval;
};

// Parses the JSON config file, rejecting unknown keys at every level.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json effective_json(const RunConfig& cfg);

// Persists the post-override config into the run directory.
void echo_config(const RunConfig& cfg, const std::string& out_dir);

}  // namespace duodepth::cli
