#pragma once

#include <memory>
#include <optional>
#include <string>

#include "duodepth/data/manifest.hpp"
#include "duodepth/model/pipeline.hpp"
#include "duodepth/nn/params.hpp"

namespace duodepth::train {

struct TrainConfig {
  int steps = 2000;
  int batch = 2;
  double lr_max = 2e-4;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;  // clip bounds are [-grad_clip, grad_clip]
  double gamma = 0.9;
  std::uint64_t seed = 1;
  int val_interval = 250;
  int val_max = 200;
  int checkpoint_interval = 1000;
  double target_epe = 0;  // > 0: stop once validation EPE falls below
  bool assert_clip = false;  // debug hook: verify post-clip bounds each step
  std::string model = "full";  // "full" | "rt"
};

// Sample access abstraction: disk-backed manifests and on-the-fly synthetic
// rendering share the training loop.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual data::StereoSample get(std::size_t index) const = 0;
};

class ManifestSource : public SampleSource {
 public:
  ManifestSource(data::Manifest manifest, const std::string& split)
      : manifest_(std::move(manifest)), indices_(manifest_.indices(split)) {}
  std::size_t size() const override { return indices_.size(); }
  data::StereoSample get(std::size_t i) const override {
    return data::load_stereo_sample(manifest_, indices_.at(i));
  }

 private:
  data::Manifest manifest_;
  std::vector<std::size_t> indices_;
};

class SyntheticSource : public SampleSource {
 public:
  SyntheticSource(data::SceneSpec spec, data::PriorParams prior, std::size_t count,
                  std::uint64_t first_id)
      : spec_(spec), prior_(prior), count_(count), first_id_(first_id) {}
  std::size_t size() const override { return count_; }
  data::StereoSample get(std::size_t i) const override {
    return data::render_stereo(spec_, first_id_ + i, prior_);
  }

 private:
  data::SceneSpec spec_;
  data::PriorParams prior_;
  std::size_t count_;
  std::uint64_t first_id_;
};

struct TrainResult {
  int steps_run = 0;
  double final_loss = 0;
  double final_val_epe = 0;
  double best_val_epe = 0;
  std::string checkpoint_path;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runs the seeded training loop, writing logs/metrics.jsonl and periodic
// checkpoints under out_dir. Resuming from resume_path continues bitwise.
TrainResult train_model(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                        const SampleSource& train_src, const SampleSource& val_src,
                        const std::string& out_dir, const std::string& resume_path = "");

// Forward-only disparity for one sample under either model kind.
Grid<float> infer_sample(nn::ParamStore<float>& params, const model::ModelConfig& mcfg,
                         const std::string& model_kind, const data::StereoSample& sample,
                         model::InferStats* stats = nullptr);

double validate_epe(nn::ParamStore<float>& params, const model::ModelConfig& mcfg,
                    const std::string& model_kind, const SampleSource& val_src, int max_samples);

// Loads the parameter store plus the stored model config from a checkpoint.
model::ModelConfig load_model_checkpoint(const std::string& path,
                                         nn::ParamStore<float>& params,
                                         std::string* model_kind = nullptr);

}  // namespace duodepth::train
