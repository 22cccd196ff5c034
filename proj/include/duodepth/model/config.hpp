#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace duodepth::model {

struct CascadeStageConfig {
  int scale = 4;        // one of 16, 8, 4
  int num_samples = 9;  // D, per-pixel candidates
  double delta = 1.0;   // nominal sampling interval, stage pixels
  int gru_updates = 1;
};

struct RealtimeConfig {
  CascadeStageConfig s16{16, 12, 1.0, 1};  // full candidate set at 1/16
  CascadeStageConfig s8{8, 9, 1.0, 1};
  CascadeStageConfig s4{4, 9, 1.0, 2};
  bool full_volumes = false;  // disable local sampling (equivalence runs)
  int hidden_channels = 48;
  int eng_channels = 32;
  int dec_channels = 24;
  int lookup_radius = 2;
};

// Architecture knobs. Every width is configurable; the defaults match the
// documented model card in the README.
struct ModelConfig {
  std::array<int, 4> encoder_widths{32, 48, 64, 96};
  int trunk_channels = 48;    // shared mid-resolution (1/4) trunk
  int pyramid_channels = 48;  // all four pyramid levels (divisible by groups)
  int context_channels = 64;
  int hidden_channels = 96;  // GRU state width c_h
  int eng_channels = 48;     // En_g output
  int end_channels = 16;     // En_d output
  int dec_channels = 32;     // residual decoder mid width
  int max_disp_quarter = 48;
  int lookup_radius = 4;
  int lookup_levels = 2;
  int groups = 8;
  bool regularize_volume = true;
  int n1 = 2;
  int n2 = 2;
  double flow_oob_sentinel = 8.0;  // per-channel-mean residual at invalid warps

  std::string prior_provider = "oracle";  // "oracle" | "learned"

  // ablation switches
  bool no_sga = false;
  bool no_mgr = false;
  bool conv_fusion = false;
  bool no_feature_sharing = false;

  RealtimeConfig rt;

  std::string summary() const {
    std::string s;
    s += "enc=" + std::to_string(encoder_widths[0]) + "," + std::to_string(encoder_widths[1]) +
         "," + std::to_string(encoder_widths[2]) + "," + std::to_string(encoder_widths[3]);
    s += ";trunk=" + std::to_string(trunk_channels);
    s += ";pyr=" + std::to_string(pyramid_channels);
    s += ";ctx=" + std::to_string(context_channels);
    s += ";h=" + std::to_string(hidden_channels);
    s += ";eng=" + std::to_string(eng_channels);
    s += ";end=" + std::to_string(end_channels);
    s += ";dec=" + std::to_string(dec_channels);
    s += ";maxd=" + std::to_string(max_disp_quarter);
    s += ";lr=" + std::to_string(lookup_radius) + "x" + std::to_string(lookup_levels);
    s += ";g=" + std::to_string(groups);
    s += ";reg=" + std::to_string(int(regularize_volume));
    s += ";n1=" + std::to_string(n1) + ";n2=" + std::to_string(n2);
    s += ";prior=" + prior_provider;
    s += ";abl=" + std::to_string(int(no_sga)) + std::to_string(int(no_mgr)) +
         std::to_string(int(conv_fusion)) + std::to_string(int(no_feature_sharing));
    s += ";rt=" + std::to_string(rt.s16.num_samples) + "/" + std::to_string(rt.s8.num_samples) +
         "/" + std::to_string(rt.s4.num_samples) + ":" + std::to_string(rt.s16.gru_updates) +
         std::to_string(rt.s8.gru_updates) + std::to_string(rt.s4.gru_updates) +
         ";rth=" + std::to_string(rt.hidden_channels);
    return s;
  }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string arch_hash(const ModelConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)fnv1a64(cfg.summary()));
  return buf;
}

}  // namespace duodepth::model
