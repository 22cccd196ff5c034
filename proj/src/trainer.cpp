#include "duodepth/train/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "duodepth/metrics/metrics.hpp"
#include "duodepth/model/config_json.hpp"
#include "duodepth/model/realtime.hpp"
#include "duodepth/nn/checkpoint.hpp"
#include "duodepth/nn/optim.hpp"
#include "duodepth/train/loss.hpp"

namespace duodepth::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SampleLoss {
  double loss = 0;
  double clamp_rate = 0;
};

// One forward/backward pass; gradients are accumulated into the store.
SampleLoss train_step_sample(nn::ParamStore<float>& params, const model::ModelConfig& mcfg,
                             const TrainConfig& tcfg, const data::StereoSample& s) {
  nn::Tape<float> t;
  const Grid<float> left = data::to_grid(s.left);
  const Grid<float> right = data::to_grid(s.right);
  nn::Var total = -1;
  double clamp_rate = 0;
  if (tcfg.model == "rt") {
    auto fwd = model::rt_forward(t, params, mcfg, left, right, s.prior_inv_depth);
    total = weighted_history_loss(t, fwd.update_history_full, s.gt_disparity, s.valid,
                                  tcfg.gamma);
    clamp_rate = fwd.mean_clamp_rate;
  } else {
    auto fwd = model::stereo_forward(t, params, mcfg, left, right, s.prior_inv_depth);
    total = stereo_loss(t, fwd.refinement.stereo_history_full, s.gt_disparity, s.valid,
                        tcfg.gamma, mcfg.n1, mcfg.n2);
    if (int(fwd.refinement.mono_history_full.size()) == mcfg.n2 && mcfg.n2 > 0) {
      nn::Var lm = mono_loss(t, fwd.refinement.mono_history_full, s.gt_disparity, s.valid,
                             tcfg.gamma, mcfg.n1, mcfg.n2);
      total = nn::add(t, total, lm);
    }
    clamp_rate = fwd.refinement.mean_clamp_rate;
  }
  const double loss = double(t.val(total).v[0]);
  if (!std::isfinite(loss)) throw TrainingDiverged("non-finite training loss");
  t.backward(total);
  t.flush_param_grads(params);
  return SampleLoss{loss, clamp_rate};
}

std::string step_ckpt_name(int step) {
  std::ostringstream os;
  os << "step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return os.str();
}

}  // namespace

Grid<float> infer_sample(nn::ParamStore<float>& params, const model::ModelConfig& mcfg,
                         const std::string& model_kind, const data::StereoSample& sample,
                         model::InferStats* stats) {
  const Grid<float> left = data::to_grid(sample.left);
  const Grid<float> right = data::to_grid(sample.right);
  if (model_kind == "rt") return model::infer_rt(params, mcfg, left, right,
                                                 sample.prior_inv_depth, stats);
  return model::infer_stereo(params, mcfg, left, right, sample.prior_inv_depth, stats);
}

double validate_epe(nn::ParamStore<float>& params, const model::ModelConfig& mcfg,
                    const std::string& model_kind, const SampleSource& val_src,
                    int max_samples) {
  metrics::DisparityAccumulator acc;
  const std::size_t n = std::min<std::size_t>(val_src.size(), std::size_t(max_samples));
  for (std::size_t i = 0; i < n; ++i) {
    const data::StereoSample s = val_src.get(i);
    const Grid<float> pred = infer_sample(params, mcfg, model_kind, s);
    acc.add(pred, s.gt_disparity, s.valid);
  }
  return acc.result().epe;
}

model::ModelConfig load_model_checkpoint(const std::string& path, nn::ParamStore<float>& params,
                                         std::string* model_kind) {
  const json header = nn::load_checkpoint(path, params);
  if (model_kind) *model_kind = header.value("kind", "full");
  return model::model_from_json(header.at("model"));
}

TrainResult train_model(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                        const SampleSource& train_src, const SampleSource& val_src,
                        const std::string& out_dir, const std::string& resume_path) {
  if (train_src.size() == 0) throw ContractViolation("train: empty training set");
  fs::create_directories(fs::path(out_dir) / "checkpoints");
  fs::create_directories(fs::path(out_dir) / "logs");

  nn::ParamStore<float> params;
  nn::AdamW<float> opt;
  opt.weight_decay = tcfg.weight_decay;
  nn::OneCycleSchedule schedule;
  schedule.lr_max = tcfg.lr_max;
  schedule.total_steps = tcfg.steps;

  Rng data_rng(tcfg.seed ^ 0x5eed5eedULL);
  int start_step = 0;

  if (resume_path.empty()) {
    Rng init_rng(tcfg.seed);
    if (tcfg.model == "rt")
      model::init_rt_model_params(params, mcfg, init_rng);
    else
      model::init_model_params(params, mcfg, init_rng);
  } else {
    std::map<std::string, Eigen::ArrayXf> extra;
    const json header = nn::load_checkpoint(resume_path, params, &extra);
    const json& ts = header.at("train");
    start_step = ts.at("step");
    data_rng.set_state(ts.at("rng"));
    opt.set_steps_taken(ts.at("opt_steps"));
    for (auto& [name, arr] : extra) {
      if (name.rfind("adam.m.", 0) == 0)
        opt.first_moments()[name.substr(7)] = arr;
      else if (name.rfind("adam.v.", 0) == 0)
        opt.second_moments()[name.substr(7)] = arr;
    }
  }

  const std::string log_path = (fs::path(out_dir) / "logs" / "metrics.jsonl").string();
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("train: cannot open log: " + log_path);

  auto save = [&](int step, const std::string& name, double last_loss) {
    std::map<std::string, Eigen::ArrayXf> extra;
    for (auto& [pname, arr] : opt.first_moments()) extra["adam.m." + pname] = arr;
    for (auto& [pname, arr] : opt.second_moments()) extra["adam.v." + pname] = arr;
    json meta;
    meta["kind"] = tcfg.model;
    meta["arch_hash"] = model::arch_hash(mcfg);
    meta["model"] = model::to_json(mcfg);
    meta["train"] = {{"step", step}, {"rng", data_rng.state()},
                     {"opt_steps", opt.steps_taken()}, {"loss", last_loss},
                     {"lr_max", tcfg.lr_max}, {"total_steps", tcfg.steps},
                     {"seed", tcfg.seed}};
    const std::string path = (fs::path(out_dir) / "checkpoints" / name).string();
    nn::save_checkpoint(path, params, extra, meta);
    return path;
  };

  TrainResult result;
  result.best_val_epe = 1e30;
  double last_loss = 0;
  int step = start_step;
  for (; step < tcfg.steps; ++step) {
    params.zero_grad();
    double loss_sum = 0;
    int got = 0;
    int attempts = 0;
    while (got < tcfg.batch && attempts < tcfg.batch * 8) {
      ++attempts;
      const std::size_t idx = std::size_t(data_rng.bits() % train_src.size());
      try {
        const SampleLoss sl = train_step_sample(params, mcfg, tcfg, train_src.get(idx));
        loss_sum += sl.loss;
        ++got;
      } catch (const EmptyDomainError&) {
        continue;  // sample without valid pixels: skip-sample signal
      }
    }
    if (got == 0) throw ContractViolation("train: no usable samples");
    for (auto& [name, p] : params) p.grad /= float(got);
    nn::clip_gradients(params, float(-tcfg.grad_clip), float(tcfg.grad_clip));
    if (tcfg.assert_clip &&
        !nn::gradients_within(params, float(-tcfg.grad_clip), float(tcfg.grad_clip)))
      throw std::logic_error("train: gradient escaped the clip range");
    const double lr = schedule.lr_at(step);
    opt.step(params, lr);
    last_loss = loss_sum / got;
    result.steps_run = step + 1;

    const bool validate_now =
        (tcfg.val_interval > 0 && (step + 1) % tcfg.val_interval == 0) || step + 1 == tcfg.steps;
    json line = {{"step", step + 1}, {"loss", last_loss}, {"lr", lr}};
    if (validate_now) {
      const double epe = validate_epe(params, mcfg, tcfg.model, val_src, tcfg.val_max);
      result.final_val_epe = epe;
      result.best_val_epe = std::min(result.best_val_epe, epe);
      line["epe_val"] = epe;
    }
    log << line.dump() << "\n";
    log.flush();

    if (tcfg.checkpoint_interval > 0 && (step + 1) % tcfg.checkpoint_interval == 0)
      save(step + 1, step_ckpt_name(step + 1), last_loss);

    if (validate_now && tcfg.target_epe > 0 && result.final_val_epe < tcfg.target_epe) {
      ++step;
      break;
    }
  }

  result.final_loss = last_loss;
  if (result.final_val_epe == 0 && result.best_val_epe == 1e30) {
    result.final_val_epe = validate_epe(params, mcfg, tcfg.model, val_src, tcfg.val_max);
    result.best_val_epe = result.final_val_epe;
  }
  result.checkpoint_path = save(step, "latest.ckpt", last_loss);
  return result;
}

}  // namespace duodepth::train
