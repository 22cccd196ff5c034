#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duodepth/core/grid.hpp"

namespace duodepth::data {

// 8-bit RGB raster, row-major, channel-fastest.
struct Image8 {
  int h = 0, w = 0;
  std::vector<std::uint8_t> rgb;  // size h*w*3

  Image8() = default;
  Image8(int h_, int w_) : h(h_), w(w_), rgb(std::size_t(h_) * w_ * 3, 0) {}

  std::uint8_t& at(int y, int x, int k) { return rgb[(std::size_t(y) * w + x) * 3 + k]; }
  std::uint8_t at(int y, int x, int k) const { return rgb[(std::size_t(y) * w + x) * 3 + k]; }

  float gray(int y, int x) const {
    return (float(at(y, x, 0)) + float(at(y, x, 1)) + float(at(y, x, 2))) / 3.0f;
  }
};

void write_ppm(const std::string& path, const Image8& img);
Image8 read_ppm(const std::string& path);

// Image as float grid in [-1, 1], 3 channels (network input convention).
Grid<float> to_grid(const Image8& img);

Grid<float> gray_grid(const Image8& img);  // [0, 255], 1 channel
Grid<float> rgb_grid(const Image8& img);   // [0, 255], 3 channels

}  // namespace duodepth::data
