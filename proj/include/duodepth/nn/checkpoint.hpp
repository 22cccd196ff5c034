#pragma once

#include <map>
#include <string>

#include "json.hpp"

#include "duodepth/nn/params.hpp"

namespace duodepth::nn {

// Single-file archive: magic, length-prefixed JSON header (arch hash, model
// config, array directory, train state), then raw little-endian float32 data.
void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const std::map<std::string, Eigen::ArrayXf>& extra_arrays,
                     const nlohmann::json& meta);

// Fills `params` (created from the header directory) and returns the header.
// Arrays outside the parameter namespace land in extra_arrays when given.
nlohmann::json load_checkpoint(const std::string& path, ParamStore<float>& params,
                               std::map<std::string, Eigen::ArrayXf>* extra_arrays = nullptr);

}  // namespace duodepth::nn
