#include "duodepth/data/ppm.hpp"

#include <fstream>
#include <sstream>

namespace duodepth::data {

void write_ppm(const std::string& path, const Image8& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("ppm: cannot open for write: " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (!f) throw IoError("ppm: write failed: " + path);
}

Image8 read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("ppm: cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw ParseError("ppm: bad magic", 0);
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255) throw ParseError("ppm: bad header", 2);
  f.get();  // single whitespace after maxval
  Image8 img(h, w);
  f.read(reinterpret_cast<char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (f.gcount() != std::streamsize(img.rgb.size()))
    throw ParseError("ppm: truncated payload", std::size_t(f.tellg()));
  return img;
}

Grid<float> to_grid(const Image8& img) {
  Grid<float> g(img.h, img.w, 3);
  for (std::int64_t i = 0; i < g.size(); ++i)
    g.v[i] = float(img.rgb[std::size_t(i)]) / 127.5f - 1.0f;
  return g;
}

Grid<float> gray_grid(const Image8& img) {
  Grid<float> g(img.h, img.w, 1);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) g.at(y, x) = img.gray(y, x);
  return g;
}


Grid<float> rgb_grid(const Image8& img) {
  Grid<float> g(img.h, img.w, 3);
  for (std::int64_t i = 0; i < g.size(); ++i) g.v[i] = float(img.rgb[std::size_t(i)]);
  return g;
}

}  // namespace duodepth::data
