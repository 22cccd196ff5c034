#pragma once

#include "json.hpp"

#include "duodepth/model/config.hpp"

namespace duodepth::model {

inline nlohmann::json to_json(const CascadeStageConfig& s) {
  return {{"scale", s.scale}, {"num_samples", s.num_samples}, {"delta", s.delta},
          {"gru_updates", s.gru_updates}};
}

inline CascadeStageConfig stage_from_json(const nlohmann::json& j, CascadeStageConfig d) {
  d.scale = j.value("scale", d.scale);
  d.num_samples = j.value("num_samples", d.num_samples);
  d.delta = j.value("delta", d.delta);
  d.gru_updates = j.value("gru_updates", d.gru_updates);
  return d;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"encoder_widths", c.encoder_widths},
          {"trunk_channels", c.trunk_channels},
          {"pyramid_channels", c.pyramid_channels},
          {"context_channels", c.context_channels},
          {"hidden_channels", c.hidden_channels},
          {"eng_channels", c.eng_channels},
          {"end_channels", c.end_channels},
          {"dec_channels", c.dec_channels},
          {"max_disp_quarter", c.max_disp_quarter},
          {"lookup_radius", c.lookup_radius},
          {"lookup_levels", c.lookup_levels},
          {"groups", c.groups},
          {"regularize_volume", c.regularize_volume},
          {"n1", c.n1},
          {"n2", c.n2},
          {"flow_oob_sentinel", c.flow_oob_sentinel},
          {"prior_provider", c.prior_provider},
          {"no_sga", c.no_sga},
          {"no_mgr", c.no_mgr},
          {"conv_fusion", c.conv_fusion},
          {"no_feature_sharing", c.no_feature_sharing},
          {"rt",
           {{"s16", to_json(c.rt.s16)},
            {"s8", to_json(c.rt.s8)},
            {"s4", to_json(c.rt.s4)},
            {"full_volumes", c.rt.full_volumes},
            {"hidden_channels", c.rt.hidden_channels},
            {"eng_channels", c.rt.eng_channels},
            {"dec_channels", c.rt.dec_channels},
            {"lookup_radius", c.rt.lookup_radius}}}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("encoder_widths")) {
    const auto& ew = j.at("encoder_widths");
    for (int i = 0; i < 4; ++i) c.encoder_widths[std::size_t(i)] = ew.at(std::size_t(i));
  }
  c.trunk_channels = j.value("trunk_channels", c.trunk_channels);
  c.pyramid_channels = j.value("pyramid_channels", c.pyramid_channels);
  c.context_channels = j.value("context_channels", c.context_channels);
  c.hidden_channels = j.value("hidden_channels", c.hidden_channels);
  c.eng_channels = j.value("eng_channels", c.eng_channels);
  c.end_channels = j.value("end_channels", c.end_channels);
  c.dec_channels = j.value("dec_channels", c.dec_channels);
  c.max_disp_quarter = j.value("max_disp_quarter", c.max_disp_quarter);
  c.lookup_radius = j.value("lookup_radius", c.lookup_radius);
  c.lookup_levels = j.value("lookup_levels", c.lookup_levels);
  c.groups = j.value("groups", c.groups);
  c.regularize_volume = j.value("regularize_volume", c.regularize_volume);
  c.n1 = j.value("n1", c.n1);
  c.n2 = j.value("n2", c.n2);
  c.flow_oob_sentinel = j.value("flow_oob_sentinel", c.flow_oob_sentinel);
  c.prior_provider = j.value("prior_provider", c.prior_provider);
  c.no_sga = j.value("no_sga", c.no_sga);
  c.no_mgr = j.value("no_mgr", c.no_mgr);
  c.conv_fusion = j.value("conv_fusion", c.conv_fusion);
  c.no_feature_sharing = j.value("no_feature_sharing", c.no_feature_sharing);
  if (j.contains("rt")) {
    const auto& r = j.at("rt");
    c.rt.s16 = stage_from_json(r.value("s16", nlohmann::json::object()), c.rt.s16);
    c.rt.s8 = stage_from_json(r.value("s8", nlohmann::json::object()), c.rt.s8);
    c.rt.s4 = stage_from_json(r.value("s4", nlohmann::json::object()), c.rt.s4);
    c.rt.full_volumes = r.value("full_volumes", c.rt.full_volumes);
    c.rt.hidden_channels = r.value("hidden_channels", c.rt.hidden_channels);
    c.rt.eng_channels = r.value("eng_channels", c.rt.eng_channels);
    c.rt.dec_channels = r.value("dec_channels", c.rt.dec_channels);
    c.rt.lookup_radius = r.value("lookup_radius", c.rt.lookup_radius);
  }
  return c;
}

}  // namespace duodepth::model
