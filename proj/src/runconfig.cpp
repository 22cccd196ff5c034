#include "duodepth/cli/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "duodepth/model/config_json.hpp"

namespace duodepth::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ContractViolation("config: unknown key '" + where + it.key() + "'");
}

}  // namespace

data::SceneSpec DataConfig::scene_spec(std::uint64_t seed) const {
  data::SceneSpec spec;
  spec.seed = seed;
  spec.width = width;
  spec.height = height;
  spec.num_planes = planes;
  spec.num_boxes = boxes;
  spec.textureless_fraction = textureless_fraction;
  spec.depth_min = depth_min;
  spec.depth_max = depth_max;
  spec.num_views = views;
  spec.bins = bins;
  auto& k = spec.rig.intrinsics;
  k.fx = fx > 0 ? fx : 0.55 * width;
  k.fy = fy > 0 ? fy : k.fx;
  k.cx = cx >= 0 ? cx : width / 2.0;
  k.cy = cy >= 0 ? cy : height / 2.0;
  k.width = width;
  k.height = height;
  // default disparity-depth product keeps full-resolution disparities < 48 px
  spec.rig.baseline = baseline > 0 ? baseline : (0.164 * width) / k.fx;
  return spec;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  reject_unknown(j, {"io", "data", "model", "realtime", "train", "eval"}, "");
  if (j.contains("io")) {
    const auto& io = j.at("io");
    reject_unknown(io, {"seed", "out", "data_dir", "resume"}, "io.");
    cfg.seed = io.value("seed", cfg.seed);
    cfg.out_dir = io.value("out", cfg.out_dir);
    cfg.data_dir = io.value("data_dir", cfg.data_dir);
    cfg.resume = io.value("resume", cfg.resume);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d,
                   {"width", "height", "planes", "boxes", "textureless_fraction", "fx", "fy",
                    "cx", "cy", "baseline", "depth_min", "depth_max", "views", "bins",
                    "val_fraction", "prior"},
                   "data.");
    cfg.data.width = d.value("width", cfg.data.width);
    cfg.data.height = d.value("height", cfg.data.height);
    cfg.data.planes = d.value("planes", cfg.data.planes);
    cfg.data.boxes = d.value("boxes", cfg.data.boxes);
    cfg.data.textureless_fraction =
        d.value("textureless_fraction", cfg.data.textureless_fraction);
    cfg.data.fx = d.value("fx", cfg.data.fx);
    cfg.data.fy = d.value("fy", cfg.data.fy);
    cfg.data.cx = d.value("cx", cfg.data.cx);
    cfg.data.cy = d.value("cy", cfg.data.cy);
    cfg.data.baseline = d.value("baseline", cfg.data.baseline);
    cfg.data.depth_min = d.value("depth_min", cfg.data.depth_min);
    cfg.data.depth_max = d.value("depth_max", cfg.data.depth_max);
    cfg.data.views = d.value("views", cfg.data.views);
    cfg.data.val_fraction = d.value("val_fraction", cfg.data.val_fraction);
    if (d.contains("bins")) {
      const auto& b = d.at("bins");
      reject_unknown(b, {"d_min", "d_max", "num_bins"}, "data.bins.");
      cfg.data.bins.d_min = b.value("d_min", 0.0);
      cfg.data.bins.d_max = b.value("d_max", 0.0);
      cfg.data.bins.num_bins = b.value("num_bins", 0);
    }
    if (d.contains("prior")) {
      const auto& p = d.at("prior");
      reject_unknown(p, {"a_min", "a_max", "b_min", "b_max", "noise_amp", "noise_scale"},
                     "data.prior.");
      cfg.data.prior.a_min = p.value("a_min", cfg.data.prior.a_min);
      cfg.data.prior.a_max = p.value("a_max", cfg.data.prior.a_max);
      cfg.data.prior.b_min = p.value("b_min", cfg.data.prior.b_min);
      cfg.data.prior.b_max = p.value("b_max", cfg.data.prior.b_max);
      cfg.data.prior.noise_amp = p.value("noise_amp", cfg.data.prior.noise_amp);
      cfg.data.prior.noise_scale = p.value("noise_scale", cfg.data.prior.noise_scale);
    }
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m,
                   {"encoder_widths", "trunk_channels", "pyramid_channels", "context_channels",
                    "hidden_channels", "eng_channels", "end_channels", "dec_channels",
                    "max_disp_quarter", "lookup_radius", "lookup_levels", "groups",
                    "regularize_volume", "n1", "n2", "flow_oob_sentinel", "prior_provider",
                    "no_sga", "no_mgr", "conv_fusion", "no_feature_sharing"},
                   "model.");
    json merged = m;
    cfg.model = model::model_from_json(merged);
  }
  if (j.contains("realtime")) {
    const auto& r = j.at("realtime");
    reject_unknown(r,
                   {"s16", "s8", "s4", "full_volumes", "hidden_channels", "eng_channels",
                    "dec_channels", "lookup_radius"},
                   "realtime.");
    json wrap = {{"rt", r}};
    model::ModelConfig with_rt = model::model_from_json(wrap);
    cfg.model.rt = with_rt.rt;
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t,
                   {"steps", "batch", "lr_max", "weight_decay", "grad_clip", "gamma", "seed",
                    "val_interval", "val_max", "checkpoint_interval", "target_epe",
                    "assert_clip", "model"},
                   "train.");
    cfg.train.steps = t.value("steps", cfg.train.steps);
    cfg.train.batch = t.value("batch", cfg.train.batch);
    cfg.train.lr_max = t.value("lr_max", cfg.train.lr_max);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    cfg.train.grad_clip = t.value("grad_clip", cfg.train.grad_clip);
    cfg.train.gamma = t.value("gamma", cfg.train.gamma);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    cfg.train.val_interval = t.value("val_interval", cfg.train.val_interval);
    cfg.train.val_max = t.value("val_max", cfg.train.val_max);
    cfg.train.checkpoint_interval = t.value("checkpoint_interval", cfg.train.checkpoint_interval);
    cfg.train.target_epe = t.value("target_epe", cfg.train.target_epe);
    cfg.train.assert_clip = t.value("assert_clip", cfg.train.assert_clip);
    cfg.train.model = t.value("model", cfg.train.model);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, {"split", "regions", "depth_metrics"}, "eval.");
    cfg.eval.split = e.value("split", cfg.eval.split);
    cfg.eval.regions = e.value("regions", cfg.eval.regions);
    cfg.eval.depth_metrics = e.value("depth_metrics", cfg.eval.depth_metrics);
  }
  if (!(cfg.train.gamma > 0.0 && cfg.train.gamma < 1.0))
    throw ContractViolation("config: train.gamma must lie in (0, 1)");
  if (!(cfg.train.grad_clip > 0)) throw ContractViolation("config: train.grad_clip must be > 0");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw ContractViolation(std::string("config: ") + e.what());
  }
  return run_config_from_json(j);
}

json effective_json(const RunConfig& cfg) {
  json j;
  j["io"] = {{"seed", cfg.seed}, {"out", cfg.out_dir}, {"data_dir", cfg.data_dir},
             {"resume", cfg.resume}};
  j["data"] = {{"width", cfg.data.width},
               {"height", cfg.data.height},
               {"planes", cfg.data.planes},
               {"boxes", cfg.data.boxes},
               {"textureless_fraction", cfg.data.textureless_fraction},
               {"fx", cfg.data.fx},
               {"fy", cfg.data.fy},
               {"cx", cfg.data.cx},
               {"cy", cfg.data.cy},
               {"baseline", cfg.data.baseline},
               {"depth_min", cfg.data.depth_min},
               {"depth_max", cfg.data.depth_max},
               {"views", cfg.data.views},
               {"bins", {{"d_min", cfg.data.bins.d_min}, {"d_max", cfg.data.bins.d_max},
                         {"num_bins", cfg.data.bins.num_bins}}},
               {"val_fraction", cfg.data.val_fraction},
               {"prior",
                {{"a_min", cfg.data.prior.a_min},
                 {"a_max", cfg.data.prior.a_max},
                 {"b_min", cfg.data.prior.b_min},
                 {"b_max", cfg.data.prior.b_max},
                 {"noise_amp", cfg.data.prior.noise_amp},
                 {"noise_scale", cfg.data.prior.noise_scale}}}};
  json m = model::to_json(cfg.model);
  j["realtime"] = m.at("rt");
  m.erase("rt");
  j["model"] = m;
  j["train"] = {{"steps", cfg.train.steps},
                {"batch", cfg.train.batch},
                {"lr_max", cfg.train.lr_max},
                {"weight_decay", cfg.train.weight_decay},
                {"grad_clip", cfg.train.grad_clip},
                {"gamma", cfg.train.gamma},
                {"seed", cfg.train.seed},
                {"val_interval", cfg.train.val_interval},
                {"val_max", cfg.train.val_max},
                {"checkpoint_interval", cfg.train.checkpoint_interval},
                {"target_epe", cfg.train.target_epe},
                {"assert_clip", cfg.train.assert_clip},
                {"model", cfg.train.model}};
  j["eval"] = {{"split", cfg.eval.split}, {"regions", cfg.eval.regions},
               {"depth_metrics", cfg.eval.depth_metrics}};
  return j;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(out_dir + "/effective_config.json");
  if (!f) throw IoError("config: cannot echo into " + out_dir);
  f << effective_json(cfg).dump(2) << "\n";
}

}  // namespace duodepth::cli
