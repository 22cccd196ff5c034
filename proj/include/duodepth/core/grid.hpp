#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>

#include "duodepth/core/errors.hpp"

namespace duodepth {

// Dense H x W x C field, channel-fastest storage. The one container shared by
// the geometry path (double) and the learned path (float).
template <class S>
struct Grid {
  using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;

  int h = 0, w = 0, c = 0;
  Vec v;

  Grid() = default;
  Grid(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(Vec::Zero(std::int64_t(h_) * w_ * c_)) {}

  static Grid constant(int h, int w, int c, S value) {
    Grid g(h, w, c);
    g.v.setConstant(value);
    return g;
  }

  std::int64_t size() const { return std::int64_t(h) * w * c; }
  std::int64_t idx(int y, int x, int k) const { return (std::int64_t(y) * w + x) * c + k; }

  S& at(int y, int x, int k = 0) { return v[idx(y, x, k)]; }
  S at(int y, int x, int k = 0) const { return v[idx(y, x, k)]; }

  bool same_shape(const Grid& o) const { return h == o.h && w == o.w && c == o.c; }

  // Bilinear sample of channel k at fractional (y, x); coordinates are clamped
  // to the valid rectangle.
  S sample_clamped(S y, S x, int k = 0) const {
    const S yc = std::clamp(y, S(0), S(h - 1));
    const S xc = std::clamp(x, S(0), S(w - 1));
    const int y0 = std::min(int(yc), h - 2 >= 0 ? h - 2 : 0);
    const int x0 = std::min(int(xc), w - 2 >= 0 ? w - 2 : 0);
    const int y1 = std::min(y0 + 1, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const S fy = yc - S(y0);
    const S fx = xc - S(x0);
    return (S(1) - fy) * ((S(1) - fx) * at(y0, x0, k) + fx * at(y0, x1, k)) +
           fy * ((S(1) - fx) * at(y1, x0, k) + fx * at(y1, x1, k));
  }

  template <class T>
  Grid<T> cast() const {
    Grid<T> out;
    out.h = h;
    out.w = w;
    out.c = c;
    out.v = v.template cast<T>();
    return out;
  }
};

template <class S>
inline void require_shape(const Grid<S>& g, int h, int w, int c, const char* what) {
  if (g.h != h || g.w != w || g.c != c)
    throw ContractViolation(std::string(what) + ": expected " + std::to_string(h) + "x" +
                            std::to_string(w) + "x" + std::to_string(c) + ", got " +
                            std::to_string(g.h) + "x" + std::to_string(g.w) + "x" +
                            std::to_string(g.c));
}

// Nearest-node subsample by integer stride; grid node (y, x) of the result
// corresponds to node (factor*y, factor*x) of the input.
template <class S>
inline Grid<S> stride_sample(const Grid<S>& g, int factor) {
  Grid<S> out(g.h / factor, g.w / factor, g.c);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int k = 0; k < g.c; ++k) out.at(y, x, k) = g.at(y * factor, x * factor, k);
  return out;
}

}  // namespace duodepth
