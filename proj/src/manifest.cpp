#include "duodepth/data/manifest.hpp"

#include "duodepth/data/pfm.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace duodepth::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sample_stem(std::uint64_t id) {
  std::ostringstream os;
  os << "s" << std::setw(6) << std::setfill('0') << id;
  return os.str();
}

json rig_to_json(const geo::StereoRig& rig) {
  return json{{"fx", rig.intrinsics.fx},     {"fy", rig.intrinsics.fy},
              {"cx", rig.intrinsics.cx},     {"cy", rig.intrinsics.cy},
              {"width", rig.intrinsics.width}, {"height", rig.intrinsics.height},
              {"baseline", rig.baseline}};
}

geo::StereoRig rig_from_json(const json& j) {
  geo::StereoRig rig;
  rig.intrinsics.fx = j.at("fx");
  rig.intrinsics.fy = j.at("fy");
  rig.intrinsics.cx = j.at("cx");
  rig.intrinsics.cy = j.at("cy");
  rig.intrinsics.width = j.at("width");
  rig.intrinsics.height = j.at("height");
  rig.baseline = j.at("baseline");
  return rig;
}

json view_to_json(const geo::View& v) {
  json k = json::array(), r = json::array(), t = json::array();
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) r.push_back(v.pose.rotation(i, c));
  const Eigen::Matrix3d km = v.intrinsics.matrix();
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) k.push_back(km(i, c));
  for (int i = 0; i < 3; ++i) t.push_back(v.pose.center[i]);
  return json{{"k", k}, {"r", r}, {"t", t},
              {"width", v.intrinsics.width}, {"height", v.intrinsics.height}};
}

geo::View view_from_json(const json& j) {
  geo::View v;
  const auto& k = j.at("k");
  v.intrinsics.fx = k.at(0);
  v.intrinsics.cx = k.at(2);
  v.intrinsics.fy = k.at(4);
  v.intrinsics.cy = k.at(5);
  v.intrinsics.width = j.at("width");
  v.intrinsics.height = j.at("height");
  const auto& r = j.at("r");
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) v.pose.rotation(i, c) = r.at(std::size_t(i * 3 + c));
  const auto& t = j.at("t");
  for (int i = 0; i < 3; ++i) v.pose.center[i] = t.at(std::size_t(i));
  return v;
}

std::string pick_split(std::uint64_t id, int count, double val_fraction) {
  const int val_count = int(std::lround(val_fraction * count));
  return id >= std::uint64_t(count - val_count) ? "val" : "train";
}

void save_manifest(const std::string& dir, const Manifest& m, const json& extra) {
  json j;
  j["format"] = "duodepth-dataset-v1";
  j["mode"] = m.mode;
  j["seed"] = m.seed;
  if (m.mode == "stereo") j["rig"] = rig_to_json(m.rig);
  if (m.mode == "mvs") {
    json views = json::array();
    for (const auto& v : m.view_poses) views.push_back(view_to_json(v));
    j["views"] = views;
    j["bins"] = json{{"d_min", m.bins.d_min}, {"d_max", m.bins.d_max},
                     {"num_bins", m.bins.num_bins}};
  }
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  json samples = json::array();
  for (const auto& e : m.entries) {
    json files;
    for (const auto& [role, path] : e.files) files[role] = path;
    samples.push_back(json{{"id", e.id}, {"split", e.split}, {"files", files}});
  }
  j["samples"] = samples;
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw IoError("manifest: cannot write " + dir + "/manifest.json");
  f << j.dump(2) << "\n";
}

}  // namespace

std::vector<std::size_t> Manifest::indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (split.empty() || entries[i].split == split) out.push_back(i);
  return out;
}

Manifest write_stereo_dataset(const std::string& dir, const SceneSpec& spec,
                              const PriorParams& prior, int count, double val_fraction) {
  fs::create_directories(dir);
  Manifest m;
  m.root = dir;
  m.mode = "stereo";
  m.seed = spec.seed;
  m.rig = spec.rig;
  m.rig.intrinsics.width = spec.width;
  m.rig.intrinsics.height = spec.height;
  for (int i = 0; i < count; ++i) {
    const StereoSample s = render_stereo(spec, std::uint64_t(i), prior);
    const std::string stem = sample_stem(s.id);
    ManifestEntry e;
    e.id = s.id;
    e.split = pick_split(s.id, count, val_fraction);
    e.files["left"] = stem + "_left.ppm";
    e.files["right"] = stem + "_right.ppm";
    e.files["gt_disparity"] = stem + "_disp.pfm";
    e.files["valid"] = stem + "_valid.pfm";
    e.files["textureless"] = stem + "_textureless.pfm";
    e.files["prior"] = stem + "_prior.pfm";
    write_ppm(dir + "/" + e.files["left"], s.left);
    write_ppm(dir + "/" + e.files["right"], s.right);
    write_pfm(dir + "/" + e.files["gt_disparity"], s.gt_disparity);
    write_pfm(dir + "/" + e.files["valid"], s.valid);
    write_pfm(dir + "/" + e.files["textureless"], s.textureless);
    write_pfm(dir + "/" + e.files["prior"], s.prior_inv_depth);
    m.entries.push_back(std::move(e));
  }
  save_manifest(dir, m, json::object());
  return m;
}

Manifest write_mvs_dataset(const std::string& dir, const SceneSpec& spec,
                           const PriorParams& prior, int count, double val_fraction) {
  fs::create_directories(dir);
  Manifest m;
  m.root = dir;
  m.mode = "mvs";
  m.seed = spec.seed;
  for (int i = 0; i < count; ++i) {
    const MvsSample s = render_mvs(spec, std::uint64_t(i), prior);
    if (i == 0) {
      m.view_poses = s.views;
      m.bins = s.bins;
    }
    const std::string stem = sample_stem(s.id);
    ManifestEntry e;
    e.id = s.id;
    e.split = pick_split(s.id, count, val_fraction);
    for (std::size_t v = 0; v < s.images.size(); ++v) {
      const std::string role = "view" + std::to_string(v);
      e.files[role] = stem + "_" + role + ".ppm";
      write_ppm(dir + "/" + e.files[role], s.images[v]);
    }
    e.files["gt_depth"] = stem + "_depth.pfm";
    e.files["valid"] = stem + "_valid.pfm";
    e.files["textureless"] = stem + "_textureless.pfm";
    e.files["prior"] = stem + "_prior.pfm";
    write_pfm(dir + "/" + e.files["gt_depth"], s.gt_depth);
    write_pfm(dir + "/" + e.files["valid"], s.valid);
    write_pfm(dir + "/" + e.files["textureless"], s.textureless);
    write_pfm(dir + "/" + e.files["prior"], s.prior_inv_depth);
    m.entries.push_back(std::move(e));
  }
  save_manifest(dir, m, json::object());
  return m;
}

Manifest load_manifest(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw IoError("manifest: cannot open " + dir + "/manifest.json");
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what(), std::size_t(e.byte));
  }
  Manifest m;
  m.root = dir;
  m.mode = j.at("mode");
  m.seed = j.value("seed", 0ULL);
  if (m.mode == "stereo") m.rig = rig_from_json(j.at("rig"));
  if (m.mode == "mvs") {
    for (const auto& v : j.at("views")) m.view_poses.push_back(view_from_json(v));
    m.bins.d_min = j.at("bins").at("d_min");
    m.bins.d_max = j.at("bins").at("d_max");
    m.bins.num_bins = j.at("bins").at("num_bins");
  }
  for (const auto& sj : j.at("samples")) {
    ManifestEntry e;
    e.id = sj.at("id");
    e.split = sj.at("split");
    for (auto it = sj.at("files").begin(); it != sj.at("files").end(); ++it)
      e.files[it.key()] = it.value();
    m.entries.push_back(std::move(e));
  }
  // existence validation, reported per sample id
  std::string missing;
  for (const auto& e : m.entries)
    for (const auto& [role, path] : e.files)
      if (!fs::exists(fs::path(dir) / path))
        missing += (missing.empty() ? "" : ", ") + std::to_string(e.id) + ":" + role;
  if (!missing.empty()) throw IoError("manifest: missing files for samples {" + missing + "}");
  return m;
}

StereoSample load_stereo_sample(const Manifest& m, std::size_t index) {
  const ManifestEntry& e = m.entries.at(index);
  StereoSample s;
  s.id = e.id;
  s.left = read_ppm(m.root + "/" + e.files.at("left"));
  s.right = read_ppm(m.root + "/" + e.files.at("right"));
  s.gt_disparity = read_pfm(m.root + "/" + e.files.at("gt_disparity"));
  s.valid = read_pfm(m.root + "/" + e.files.at("valid"));
  s.textureless = read_pfm(m.root + "/" + e.files.at("textureless"));
  s.prior_inv_depth = read_pfm(m.root + "/" + e.files.at("prior"));
  s.rig = m.rig;
  return s;
}

MvsSample load_mvs_sample(const Manifest& m, std::size_t index) {
  const ManifestEntry& e = m.entries.at(index);
  MvsSample s;
  s.id = e.id;
  s.views = m.view_poses;
  s.bins = m.bins;
  for (std::size_t v = 0;; ++v) {
    const auto it = e.files.find("view" + std::to_string(v));
    if (it == e.files.end()) break;
    s.images.push_back(read_ppm(m.root + "/" + it->second));
  }
  s.gt_depth = read_pfm(m.root + "/" + e.files.at("gt_depth"));
  s.valid = read_pfm(m.root + "/" + e.files.at("valid"));
  s.textureless = read_pfm(m.root + "/" + e.files.at("textureless"));
  s.prior_inv_depth = read_pfm(m.root + "/" + e.files.at("prior"));
  return s;
}

}  // namespace duodepth::data
