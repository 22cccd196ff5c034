// duodepth: dual-branch stereo/multi-view depth estimation at desk scale.
// Subcommands: generate-data, train, eval, infer, ablate.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "duodepth/cli/runconfig.hpp"
#include "duodepth/data/manifest.hpp"
#include "duodepth/data/pfm.hpp"
#include "duodepth/metrics/metrics.hpp"
#include "duodepth/model/config_json.hpp"
#include "duodepth/model/pipeline.hpp"
#include "duodepth/model/realtime.hpp"
#include "duodepth/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace duodepth;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

// blue -> green -> red ramp for disparity/error visualization
data::Image8 colorize(const Grid<float>& field, float lo, float hi) {
  data::Image8 img(field.h, field.w);
  for (int y = 0; y < field.h; ++y)
    for (int x = 0; x < field.w; ++x) {
      float u = (field.at(y, x) - lo) / std::max(1e-9f, hi - lo);
      u = std::clamp(u, 0.0f, 1.0f);
      const float r = std::clamp(1.5f - std::abs(4.0f * u - 3.0f), 0.0f, 1.0f);
      const float g = std::clamp(1.5f - std::abs(4.0f * u - 2.0f), 0.0f, 1.0f);
      const float b = std::clamp(1.5f - std::abs(4.0f * u - 1.0f), 0.0f, 1.0f);
      img.at(y, x, 0) = std::uint8_t(255 * r);
      img.at(y, x, 1) = std::uint8_t(255 * g);
      img.at(y, x, 2) = std::uint8_t(255 * b);
    }
  return img;
}

cli::RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return cli::RunConfig{};
  return cli::load_run_config(path);
}

// Plain-text pose file: repeated blocks
//   view <index>
//   K  <9 numbers row-major>
//   R  <9 numbers row-major>
//   t  <3 numbers>
// plus one optional "bins <d_min> <d_max> <num_bins>" line.
std::pair<std::vector<geo::View>, geo::DepthBinSpec> read_pose_file(const std::string& path,
                                                                    int width, int height) {
  std::ifstream f(path);
  if (!f) throw IoError("poses: cannot open " + path);
  std::vector<geo::View> views;
  geo::DepthBinSpec bins{0.5, 50.0, 32};
  std::string tok;
  while (f >> tok) {
    if (tok == "view") {
      int idx = 0;
      f >> idx;
      views.emplace_back();
      views.back().intrinsics.width = width;
      views.back().intrinsics.height = height;
    } else if (tok == "K") {
      double k[9];
      for (double& v : k) f >> v;
      auto& in = views.back().intrinsics;
      in.fx = k[0];
      in.cx = k[2];
      in.fy = k[4];
      in.cy = k[5];
    } else if (tok == "R") {
      for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) f >> views.back().pose.rotation(i, c);
    } else if (tok == "t") {
      for (int i = 0; i < 3; ++i) f >> views.back().pose.center[i];
    } else if (tok == "bins") {
      f >> bins.d_min >> bins.d_max >> bins.num_bins;
    } else {
      throw ContractViolation("poses: unexpected token '" + tok + "'");
    }
  }
  if (views.size() < 2) throw ContractViolation("poses: need at least two views");
  return {views, bins};
}

int cmd_generate_data(const std::string& spec_path, const std::string& out, int count,
                      std::uint64_t seed, const std::string& mode) {
  cli::RunConfig cfg = load_config_or_default(spec_path);
  data::SceneSpec spec = cfg.data.scene_spec(seed);
  data::Manifest m;
  if (mode == "stereo")
    m = data::write_stereo_dataset(out, spec, cfg.data.prior, count, cfg.data.val_fraction);
  else if (mode == "mvs")
    m = data::write_mvs_dataset(out, spec, cfg.data.prior, count, cfg.data.val_fraction);
  else
    throw ContractViolation("generate-data: mode must be stereo or mvs");
  std::cout << "wrote " << m.entries.size() << " " << mode << " samples to " << out << "\n";
  return kExitOk;
}

int cmd_train(cli::RunConfig cfg, const std::string& out_override) {
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (cfg.data_dir.empty()) throw ContractViolation("train: io.data_dir required");
  cli::echo_config(cfg, cfg.out_dir);
  data::Manifest manifest = data::load_manifest(cfg.data_dir);
  train::ManifestSource train_src(manifest, "train");
  train::ManifestSource val_src(manifest, "val");
  cfg.train.seed = cfg.train.seed ? cfg.train.seed : cfg.seed;
  const auto result =
      train::train_model(cfg.model, cfg.train, train_src, val_src, cfg.out_dir, cfg.resume);
  json summary = {{"steps_run", result.steps_run},
                  {"final_loss", result.final_loss},
                  {"final_val_epe", result.final_val_epe},
                  {"best_val_epe", result.best_val_epe},
                  {"checkpoint", result.checkpoint_path},
                  {"arch_hash", model::arch_hash(cfg.model)}};
  std::ofstream(cfg.out_dir + "/result.json") << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& report_dir,
             const std::string& split, const std::string& regions, bool depth_metrics_on,
             bool gt_as_pred) {
  nn::ParamStore<float> params;
  std::string kind;
  model::ModelConfig mcfg;
  if (!gt_as_pred) {
    mcfg = train::load_model_checkpoint(ckpt, params, &kind);
  } else {
    kind = "oracle";
  }
  data::Manifest manifest = data::load_manifest(data_dir);
  fs::create_directories(report_dir);

  metrics::Report report;
  metrics::DisparityAccumulator all, acc_edge, acc_nonedge, acc_textureless;
  const auto idx = manifest.indices(split);
  const bool want_edge = regions.find("edge") != std::string::npos;
  const bool want_textureless = regions.find("textureless") != std::string::npos;
  double edge_fraction_sum = 0;

  struct DepthAgg {
    double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, d1 = 0;
    std::int64_t n = 0;
  } dagg;

  for (std::size_t i : idx) {
    const data::StereoSample s = data::load_stereo_sample(manifest, i);
    Grid<float> pred;
    if (gt_as_pred) {
      pred = s.gt_disparity;
    } else {
      pred = train::infer_sample(params, mcfg, kind, s);
    }
    all.add(pred, s.gt_disparity, s.valid);
    const auto one = metrics::disparity_metrics(pred, s.gt_disparity, s.valid);
    report.per_sample.emplace_back("s" + std::to_string(s.id), one);

    if (want_edge) {
      const auto split_masks = metrics::edge_region_split(data::gray_grid(s.left));
      acc_edge.add(pred, s.gt_disparity, metrics::mask_and(s.valid, split_masks.edge));
      acc_nonedge.add(pred, s.gt_disparity, metrics::mask_and(s.valid, split_masks.non_edge));
      edge_fraction_sum += split_masks.edge_fraction;
    }
    if (want_textureless)
      acc_textureless.add(pred, s.gt_disparity, metrics::mask_and(s.valid, s.textureless));

    if (depth_metrics_on) {
      const auto pd = geo::disparity_to_depth(pred, s.rig);
      const auto gd = geo::disparity_to_depth(s.gt_disparity, s.rig);
      const auto m =
          metrics::depth_metrics(pd.values, gd.values,
                                 metrics::mask_and(metrics::mask_and(pd.mask, gd.mask), s.valid));
      if (m.count > 0) {
        dagg.abs_rel += m.abs_rel * double(m.count);
        dagg.sq_rel += m.sq_rel * double(m.count);
        dagg.sq += m.rmse * m.rmse * double(m.count);
        dagg.sq_log += m.rmse_log * m.rmse_log * double(m.count);
        dagg.d1 += m.delta1 * double(m.count);
        dagg.n += m.count;
      }
    }

    // artifacts: predicted disparity + error map
    const std::string stem = report_dir + "/s" + std::to_string(s.id);
    data::write_pfm(stem + "_pred.pfm", pred);
    Grid<float> err(pred.h, pred.w, 1);
    for (std::int64_t k = 0; k < err.size(); ++k)
      err.v[k] = s.valid.v[k] > 0 ? std::abs(pred.v[k] - s.gt_disparity.v[k]) : 0.0f;
    data::write_ppm(stem + "_err.ppm", colorize(err, 0.0f, 5.0f));
  }

  report.disparity["all"] = all.result();
  if (want_edge) {
    report.disparity["edge"] = acc_edge.result();
    report.disparity["non_edge"] = acc_nonedge.result();
  }
  if (want_textureless) report.disparity["textureless"] = acc_textureless.result();
  if (depth_metrics_on && dagg.n > 0) {
    metrics::DepthMetrics dm;
    dm.count = dagg.n;
    dm.abs_rel = dagg.abs_rel / double(dagg.n);
    dm.sq_rel = dagg.sq_rel / double(dagg.n);
    dm.rmse = std::sqrt(dagg.sq / double(dagg.n));
    dm.rmse_log = std::sqrt(dagg.sq_log / double(dagg.n));
    dm.delta1 = dagg.d1 / double(dagg.n);
    report.depth["all"] = dm;
  }

  std::ofstream(report_dir + "/report.txt") << report.table();
  std::ofstream(report_dir + "/report.json") << report.to_json() << "\n";
  std::cout << report.table();
  return kExitOk;
}

int cmd_infer(const std::string& ckpt, const std::string& left_path,
              const std::string& right_path, const std::string& prior_path,
              const std::string& views_dir, const std::string& poses_path,
              const std::string& out_dir) {
  nn::ParamStore<float> params;
  std::string kind;
  model::ModelConfig mcfg = train::load_model_checkpoint(ckpt, params, &kind);
  fs::create_directories(out_dir);

  if (!views_dir.empty()) {
    std::vector<Grid<float>> images;
    for (int v = 0;; ++v) {
      const std::string p = views_dir + "/view" + std::to_string(v) + ".ppm";
      if (!fs::exists(p)) break;
      images.push_back(data::to_grid(data::read_ppm(p)));
    }
    if (images.size() < 2) throw IoError("infer: found fewer than two view*.ppm files");
    auto [views, bins] = read_pose_file(poses_path, images[0].w, images[0].h);
    if (views.size() != images.size())
      throw ContractViolation("infer: pose count does not match view count");
    Grid<float> prior;
    if (!prior_path.empty())
      prior = data::read_pfm(prior_path);
    else
      prior = Grid<float>::constant(images[0].h, images[0].w, 1, 1.0f);
    nn::Tape<float> t;
    const auto fwd = model::mvs_forward(t, params, mcfg, images, views, bins, prior);
    data::write_pfm(out_dir + "/depth.pfm", fwd.depth_full);
    data::write_ppm(out_dir + "/depth.ppm",
                    colorize(fwd.depth_full, float(bins.d_min), float(bins.d_max)));
    std::cout << "wrote " << out_dir << "/depth.pfm\n";
    return kExitOk;
  }

  const data::Image8 left = data::read_ppm(left_path);
  const data::Image8 right = data::read_ppm(right_path);
  Grid<float> prior;
  if (!prior_path.empty()) {
    prior = data::read_pfm(prior_path);
  } else if (mcfg.prior_provider != "learned") {
    throw ContractViolation("infer: --prior required unless the model embeds a learned provider");
  } else {
    prior = Grid<float>::constant(left.h, left.w, 1, 0.0f);
  }
  data::StereoSample s;
  s.left = left;
  s.right = right;
  s.prior_inv_depth = prior;
  const Grid<float> pred = train::infer_sample(params, mcfg, kind, s);
  data::write_pfm(out_dir + "/disparity.pfm", pred);
  data::write_ppm(out_dir + "/disparity.ppm",
                  colorize(pred, 0.0f, float(4 * mcfg.max_disp_quarter)));
  std::cout << "wrote " << out_dir << "/disparity.pfm\n";
  return kExitOk;
}

int cmd_ablate(cli::RunConfig cfg, const std::string& out_override) {
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (cfg.data_dir.empty()) throw ContractViolation("ablate: io.data_dir required");
  cli::echo_config(cfg, cfg.out_dir);
  data::Manifest manifest = data::load_manifest(cfg.data_dir);
  train::ManifestSource train_src(manifest, "train");
  train::ManifestSource val_src(manifest, "val");

  struct Arm {
    const char* name;
    bool no_sga, no_mgr, conv_fusion;
  };
  const Arm arms[] = {{"baseline", true, true, false},
                      {"mono_conv", true, true, true},
                      {"mono_mgr", true, false, false},
                      {"full", false, false, false}};
  json rows = json::array();
  std::string table = "arm          val_epe\n";
  for (const Arm& arm : arms) {
    model::ModelConfig m = cfg.model;
    m.no_sga = arm.no_sga;
    m.no_mgr = arm.no_mgr;
    m.conv_fusion = arm.conv_fusion;
    const std::string arm_dir = cfg.out_dir + "/" + arm.name;
    const auto r = train::train_model(m, cfg.train, train_src, val_src, arm_dir);
    rows.push_back({{"arm", arm.name}, {"val_epe", r.final_val_epe},
                    {"arch_hash", model::arch_hash(m)}});
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-12s %8.4f\n", arm.name, r.final_val_epe);
    table += buf;
    std::cout << buf << std::flush;
  }
  std::ofstream(cfg.out_dir + "/ablation.json") << rows.dump(2) << "\n";
  std::ofstream(cfg.out_dir + "/ablation.txt") << table;
  std::cout << table;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duodepth: dual-branch stereo and multi-view depth estimation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, spec_path, mode = "stereo";
  std::string ckpt, data_dir, report_dir, left, right, prior, views_dir, poses;
  std::vector<std::string> ablate_flags;
  std::string model_kind;
  int count = 16;
  std::uint64_t seed = 0;
  bool seed_set = false, depth_metrics_on = false, gt_as_pred = false;
  int steps_override = -1;

  auto* gen = app.add_subcommand("generate-data", "render a synthetic dataset");
  gen->add_option("--spec", spec_path, "config file with a data section");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of samples");
  gen->add_option("--seed", seed, "dataset seed")->required();
  gen->add_option("--mode", mode, "stereo | mvs");

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "run config json");
  tr->add_option("--out", out_dir, "run directory");
  tr->add_option("--data", data_dir, "dataset directory (overrides io.data_dir)");
  tr->add_option("--model", model_kind, "full | rt");
  tr->add_option("--ablate", ablate_flags, "no_sga|no_mgr|conv_fusion|no_feature_sharing");
  tr->add_option("--steps", steps_override, "step count override");
  tr->add_option("--seed", seed, "training seed override");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  ev->add_option("--ckpt", ckpt, "checkpoint path");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--report", report_dir, "report output directory")->required();
  ev->add_option("--config", config_path, "run config json (eval section)");
  std::string regions, split = "val";
  ev->add_option("--regions", regions, "comma list: edge,textureless");
  ev->add_option("--split", split, "dataset split");
  ev->add_flag("--depth-metrics", depth_metrics_on, "also report depth metrics via the rig");
  ev->add_flag("--gt-as-pred", gt_as_pred, "pipeline sanity: evaluate ground truth as prediction");

  auto* in = app.add_subcommand("infer", "run inference on one sample");
  in->add_option("--ckpt", ckpt, "checkpoint path")->required();
  in->add_option("--left", left, "left image (ppm)");
  in->add_option("--right", right, "right image (ppm)");
  in->add_option("--prior", prior, "monocular inverse-depth prior (pfm)");
  in->add_option("--views", views_dir, "directory with view0.ppm.. (mvs mode)");
  in->add_option("--poses", poses, "pose file (mvs mode)");
  in->add_option("--out", out_dir, "output directory")->required();

  auto* ab = app.add_subcommand("ablate", "train the ablation sweep and compare");
  ab->add_option("--config", config_path, "run config json")->required();
  ab->add_option("--out", out_dir, "sweep directory");
  ab->add_option("--data", data_dir, "dataset directory (overrides io.data_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_generate_data(spec_path, out_dir, count, seed, mode);
    if (tr->parsed()) {
      cli::RunConfig cfg = load_config_or_default(config_path);
      if (!data_dir.empty()) cfg.data_dir = data_dir;
      if (!model_kind.empty()) cfg.train.model = model_kind;
      if (steps_override > 0) cfg.train.steps = steps_override;
      if (tr->count("--seed")) {
        cfg.seed = seed;
        cfg.train.seed = seed;
      }
      (void)seed_set;
      for (const auto& f : ablate_flags) {
        if (f == "no_sga")
          cfg.model.no_sga = true;
        else if (f == "no_mgr")
          cfg.model.no_mgr = true;
        else if (f == "conv_fusion")
          cfg.model.conv_fusion = true;
        else if (f == "no_feature_sharing")
          cfg.model.no_feature_sharing = true;
        else
          throw ContractViolation("train: unknown ablation flag " + f);
      }
      return cmd_train(cfg, out_dir);
    }
    if (ev->parsed()) {
      if (!gt_as_pred && ckpt.empty())
        throw ContractViolation("eval: --ckpt required unless --gt-as-pred");
      cli::RunConfig cfg = load_config_or_default(config_path);
      if (!regions.empty()) cfg.eval.regions = regions;
      if (split != "val") cfg.eval.split = split;
      if (depth_metrics_on) cfg.eval.depth_metrics = true;
      return cmd_eval(ckpt, data_dir, report_dir, cfg.eval.split, cfg.eval.regions,
                      cfg.eval.depth_metrics, gt_as_pred);
    }
    if (in->parsed()) return cmd_infer(ckpt, left, right, prior, views_dir, poses, out_dir);
    if (ab->parsed()) {
      cli::RunConfig cfg = cli::load_run_config(config_path);
      if (!data_dir.empty()) cfg.data_dir = data_dir;
      return cmd_ablate(cfg, out_dir);
    }
  } catch (const train::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
