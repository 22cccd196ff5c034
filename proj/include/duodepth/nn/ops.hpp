#pragma once

#include <cmath>
#include <vector>

#include "duodepth/nn/tape.hpp"

namespace duodepth::nn {

// Correlation value written at candidates that fall off the image; low enough
// that softmax weight underflows to zero, so they are never selected.
template <class S>
constexpr S kOobScore = S(-1e4);

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeom {
  int oh = 0, ow = 0;
  int pad_y = 0, pad_x = 0;
};

inline ConvGeom conv_geom(int h, int w, int kh, int kw, int stride) {
  ConvGeom g;
  g.oh = (h + stride - 1) / stride;
  g.ow = (w + stride - 1) / stride;
  g.pad_y = std::max(0, (g.oh - 1) * stride + kh - h) / 2;
  g.pad_x = std::max(0, (g.ow - 1) * stride + kw - w) / 2;
  return g;
}

template <class S>
void im2col(const Grid<S>& x, int kh, int kw, int stride, const ConvGeom& g, RowMat<S>& col) {
  const int cin = x.c;
  col.resize(std::int64_t(g.oh) * g.ow, std::int64_t(kh) * kw * cin);
  for (int oy = 0; oy < g.oh; ++oy) {
    for (int ox = 0; ox < g.ow; ++ox) {
      S* row = col.data() + (std::int64_t(oy) * g.ow + ox) * col.cols();
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - g.pad_y + ky;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - g.pad_x + kx;
          S* dst = row + (std::int64_t(ky) * kw + kx) * cin;
          if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w)
            std::fill(dst, dst + cin, S(0));
          else
            std::copy(x.v.data() + x.idx(iy, ix, 0), x.v.data() + x.idx(iy, ix, 0) + cin, dst);
        }
      }
    }
  }
}

template <class S>
void col2im_add(const RowMat<S>& dcol, int kh, int kw, int stride, const ConvGeom& g,
                Grid<S>& dx) {
  const int cin = dx.c;
  for (int oy = 0; oy < g.oh; ++oy) {
    for (int ox = 0; ox < g.ow; ++ox) {
      const S* row = dcol.data() + (std::int64_t(oy) * g.ow + ox) * dcol.cols();
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - g.pad_y + ky;
        if (iy < 0 || iy >= dx.h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - g.pad_x + kx;
          if (ix < 0 || ix >= dx.w) continue;
          const S* src = row + (std::int64_t(ky) * kw + kx) * cin;
          S* dst = dx.v.data() + dx.idx(iy, ix, 0);
          for (int c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// SAME-padded convolution; weight layout [kh, kw, cin, cout], bias [cout].
template <class S>
Var conv2d(Tape<S>& t, Var x, Var w, Var b, int kh, int kw, int stride) {
  const Grid<S>& xv = t.val(x);
  const Grid<S>& wv = t.val(w);
  const int cin = xv.c;
  const std::int64_t k = std::int64_t(kh) * kw * cin;
  if (wv.size() % k != 0) throw ContractViolation("conv2d: weight/input channel mismatch");
  const int cout = int(wv.size() / k);
  if (t.val(b).size() != cout) throw ContractViolation("conv2d: bias/cout mismatch");

  const ConvGeom g = conv_geom(xv.h, xv.w, kh, kw, stride);
  RowMat<S> col;
  im2col(xv, kh, kw, stride, g, col);
  Eigen::Map<const RowMat<S>> wm(wv.v.data(), k, cout);

  Grid<S> out(g.oh, g.ow, cout);
  Eigen::Map<RowMat<S>> om(out.v.data(), std::int64_t(g.oh) * g.ow, cout);
  om.noalias() = col * wm;
  om.rowwise() += Eigen::Map<const RowMat<S>>(t.val(b).v.data(), 1, cout).row(0);

  const bool needs = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  return t.push(std::move(out), needs, [x, w, b, kh, kw, stride, k, cout, g](Tape<S>& tp,
                                                                             Var self) {
    const Grid<S>& go = tp.grad(self);
    Eigen::Map<const RowMat<S>> gm(go.v.data(), std::int64_t(g.oh) * g.ow, cout);
    if (tp.needs_grad(b)) {
      Eigen::Map<RowMat<S>> dbm(tp.grad(b).v.data(), 1, cout);
      dbm.row(0) += gm.colwise().sum();
    }
    RowMat<S> col;
    if (tp.needs_grad(w) || tp.needs_grad(x)) im2col(tp.val(x), kh, kw, stride, g, col);
    if (tp.needs_grad(w)) {
      Eigen::Map<RowMat<S>> dwm(tp.grad(w).v.data(), k, cout);
      dwm.noalias() += col.transpose() * gm;
    }
    if (tp.needs_grad(x)) {
      Eigen::Map<const RowMat<S>> wm(tp.val(w).v.data(), k, cout);
      RowMat<S> dcol = gm * wm.transpose();
      col2im_add(dcol, kh, kw, stride, g, tp.grad(x));
    }
  });
}

// ---------------------------------------------------------------- elementwise

template <class S>
Var relu(Tape<S>& t, Var x) {
  Grid<S> out = t.val(x);
  out.v = out.v.max(S(0));
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    tp.grad(x).v += tp.grad(self).v * (tp.val(x).v > S(0)).template cast<S>();
  });
}

template <class S>
Var sigmoid(Tape<S>& t, Var x) {
  Grid<S> out = t.val(x);
  out.v = S(1) / (S(1) + (-out.v).exp());
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    const auto& y = tp.val(self).v;
    tp.grad(x).v += tp.grad(self).v * y * (S(1) - y);
  });
}

template <class S>
Var tanh_op(Tape<S>& t, Var x) {
  Grid<S> out = t.val(x);
  out.v = out.v.tanh();
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    const auto& y = tp.val(self).v;
    tp.grad(x).v += tp.grad(self).v * (S(1) - y * y);
  });
}

template <class S>
Var abs_op(Tape<S>& t, Var x) {
  Grid<S> out = t.val(x);
  out.v = out.v.abs();
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    tp.grad(x).v += tp.grad(self).v * tp.val(x).v.sign();
  });
}

template <class S>
Var clamp_op(Tape<S>& t, Var x, S lo, S hi, double* clamp_fraction = nullptr) {
  Grid<S> out = t.val(x);
  out.v = out.v.min(hi).max(lo);
  if (clamp_fraction) {
    const auto& xv = t.val(x).v;
    *clamp_fraction = double((xv < lo || xv > hi).count()) / double(xv.size());
  }
  return t.push(std::move(out), t.needs_grad(x), [x, lo, hi](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    const auto& xv = tp.val(x).v;
    tp.grad(x).v += tp.grad(self).v * ((xv > lo && xv < hi).template cast<S>());
  });
}

template <class S>
Var add(Tape<S>& t, Var a, Var b) {
  if (!t.val(a).same_shape(t.val(b))) throw ContractViolation("add: shape mismatch");
  Grid<S> out = t.val(a);
  out.v += t.val(b).v;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape<S>& tp, Var self) {
                  if (tp.needs_grad(a)) tp.grad(a).v += tp.grad(self).v;
                  if (tp.needs_grad(b)) tp.grad(b).v += tp.grad(self).v;
                });
}

template <class S>
Var sub(Tape<S>& t, Var a, Var b) {
  if (!t.val(a).same_shape(t.val(b))) throw ContractViolation("sub: shape mismatch");
  Grid<S> out = t.val(a);
  out.v -= t.val(b).v;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape<S>& tp, Var self) {
                  if (tp.needs_grad(a)) tp.grad(a).v += tp.grad(self).v;
                  if (tp.needs_grad(b)) tp.grad(b).v -= tp.grad(self).v;
                });
}

template <class S>
Var mul(Tape<S>& t, Var a, Var b) {
  if (!t.val(a).same_shape(t.val(b))) throw ContractViolation("mul: shape mismatch");
  Grid<S> out = t.val(a);
  out.v *= t.val(b).v;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape<S>& tp, Var self) {
                  if (tp.needs_grad(a)) tp.grad(a).v += tp.grad(self).v * tp.val(b).v;
                  if (tp.needs_grad(b)) tp.grad(b).v += tp.grad(self).v * tp.val(a).v;
                });
}

template <class S>
Var scale(Tape<S>& t, Var x, S factor) {
  Grid<S> out = t.val(x);
  out.v *= factor;
  return t.push(std::move(out), t.needs_grad(x), [x, factor](Tape<S>& tp, Var self) {
    if (tp.needs_grad(x)) tp.grad(x).v += tp.grad(self).v * factor;
  });
}

template <class S>
Var add_scalar(Tape<S>& t, Var x, S value) {
  Grid<S> out = t.val(x);
  out.v += value;
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (tp.needs_grad(x)) tp.grad(x).v += tp.grad(self).v;
  });
}

// out = x .* k, with k a constant grid (k.c == x.c, or k.c == 1 broadcast).
template <class S>
Var cmul_const(Tape<S>& t, Var x, const Grid<S>& k) {
  const Grid<S>& xv = t.val(x);
  const bool bcast = k.c == 1 && xv.c != 1;
  if (!bcast && !xv.same_shape(k)) throw ContractViolation("cmul_const: shape mismatch");
  if (bcast && (k.h != xv.h || k.w != xv.w)) throw ContractViolation("cmul_const: plane mismatch");
  Grid<S> out = xv;
  if (bcast) {
    for (int y = 0; y < xv.h; ++y)
      for (int xx = 0; xx < xv.w; ++xx) {
        const S f = k.at(y, xx, 0);
        for (int c = 0; c < xv.c; ++c) out.at(y, xx, c) *= f;
      }
  } else {
    out.v *= k.v;
  }
  Grid<S> kk = k;
  return t.push(std::move(out), t.needs_grad(x),
                [x, kk = std::move(kk), bcast](Tape<S>& tp, Var self) {
                  if (!tp.needs_grad(x)) return;
                  Grid<S>& gx = tp.grad(x);
                  const Grid<S>& go = tp.grad(self);
                  if (bcast) {
                    for (int y = 0; y < gx.h; ++y)
                      for (int xx = 0; xx < gx.w; ++xx) {
                        const S f = kk.at(y, xx, 0);
                        for (int c = 0; c < gx.c; ++c)
                          gx.at(y, xx, c) += go.at(y, xx, c) * f;
                      }
                  } else {
                    gx.v += go.v * kk.v;
                  }
                });
}

template <class S>
Var cadd_const(Tape<S>& t, Var x, const Grid<S>& k) {
  const Grid<S>& xv = t.val(x);
  if (!xv.same_shape(k)) throw ContractViolation("cadd_const: shape mismatch");
  Grid<S> out = xv;
  out.v += k.v;
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (tp.needs_grad(x)) tp.grad(x).v += tp.grad(self).v;
  });
}

// out = mask > 0 ? x : fallback (mask constant; c == x.c or broadcast c == 1).
template <class S>
Var blend_mask(Tape<S>& t, Var x, const Grid<S>& mask, S fallback) {
  const Grid<S>& xv = t.val(x);
  const bool bcast = mask.c == 1 && xv.c != 1;
  if (!bcast && !xv.same_shape(mask)) throw ContractViolation("blend_mask: shape mismatch");
  Grid<S> out = xv;
  for (int y = 0; y < xv.h; ++y)
    for (int xx = 0; xx < xv.w; ++xx)
      for (int c = 0; c < xv.c; ++c)
        if (!(mask.at(y, xx, bcast ? 0 : c) > S(0))) out.at(y, xx, c) = fallback;
  Grid<S> mk = mask;
  return t.push(std::move(out), t.needs_grad(x),
                [x, mk = std::move(mk), bcast](Tape<S>& tp, Var self) {
                  if (!tp.needs_grad(x)) return;
                  Grid<S>& gx = tp.grad(x);
                  const Grid<S>& go = tp.grad(self);
                  for (int y = 0; y < gx.h; ++y)
                    for (int xx = 0; xx < gx.w; ++xx)
                      for (int c = 0; c < gx.c; ++c)
                        if (mk.at(y, xx, bcast ? 0 : c) > S(0))
                          gx.at(y, xx, c) += go.at(y, xx, c);
                });
}

// ------------------------------------------------------------ shape plumbing

template <class S>
Var concat_c(Tape<S>& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractViolation("concat_c: empty");
  const int h = t.val(xs[0]).h, w = t.val(xs[0]).w;
  int ctot = 0;
  bool needs = false;
  for (Var x : xs) {
    if (t.val(x).h != h || t.val(x).w != w) throw ContractViolation("concat_c: plane mismatch");
    ctot += t.val(x).c;
    needs = needs || t.needs_grad(x);
  }
  Grid<S> out(h, w, ctot);
  int off = 0;
  for (Var x : xs) {
    const Grid<S>& xv = t.val(x);
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        std::copy(xv.v.data() + xv.idx(y, xx, 0), xv.v.data() + xv.idx(y, xx, 0) + xv.c,
                  out.v.data() + out.idx(y, xx, off));
    off += xv.c;
  }
  std::vector<Var> ids = xs;
  return t.push(std::move(out), needs, [ids](Tape<S>& tp, Var self) {
    const Grid<S>& go = tp.grad(self);
    int off = 0;
    for (Var x : ids) {
      const int cx = tp.val(x).c;
      if (tp.needs_grad(x)) {
        Grid<S>& gx = tp.grad(x);
        for (int y = 0; y < gx.h; ++y)
          for (int xx = 0; xx < gx.w; ++xx)
            for (int c = 0; c < cx; ++c) gx.at(y, xx, c) += go.at(y, xx, off + c);
      }
      off += cx;
    }
  });
}

template <class S>
Var slice_c(Tape<S>& t, Var x, int from, int count) {
  const Grid<S>& xv = t.val(x);
  if (from < 0 || from + count > xv.c) throw ContractViolation("slice_c: out of range");
  Grid<S> out(xv.h, xv.w, count);
  for (int y = 0; y < xv.h; ++y)
    for (int xx = 0; xx < xv.w; ++xx)
      for (int c = 0; c < count; ++c) out.at(y, xx, c) = xv.at(y, xx, from + c);
  return t.push(std::move(out), t.needs_grad(x), [x, from, count](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    Grid<S>& gx = tp.grad(x);
    const Grid<S>& go = tp.grad(self);
    for (int y = 0; y < gx.h; ++y)
      for (int xx = 0; xx < gx.w; ++xx)
        for (int c = 0; c < count; ++c) gx.at(y, xx, from + c) += go.at(y, xx, c);
  });
}

// ------------------------------------------------------------- reductions

template <class S>
Var softmax_c(Tape<S>& t, Var x) {
  const Grid<S>& xv = t.val(x);
  Grid<S> out(xv.h, xv.w, xv.c);
  for (int y = 0; y < xv.h; ++y)
    for (int xx = 0; xx < xv.w; ++xx) {
      S mx = xv.at(y, xx, 0);
      for (int c = 1; c < xv.c; ++c) mx = std::max(mx, xv.at(y, xx, c));
      S sum = 0;
      for (int c = 0; c < xv.c; ++c) {
        const S e = std::exp(xv.at(y, xx, c) - mx);
        out.at(y, xx, c) = e;
        sum += e;
      }
      for (int c = 0; c < xv.c; ++c) out.at(y, xx, c) /= sum;
    }
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    const Grid<S>& y = tp.val(self);
    const Grid<S>& go = tp.grad(self);
    Grid<S>& gx = tp.grad(x);
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx) {
        S dot = 0;
        for (int c = 0; c < y.c; ++c) dot += go.at(yy, xx, c) * y.at(yy, xx, c);
        for (int c = 0; c < y.c; ++c)
          gx.at(yy, xx, c) += (go.at(yy, xx, c) - dot) * y.at(yy, xx, c);
      }
  });
}

template <class S>
Var sum_c(Tape<S>& t, Var x) {
  const Grid<S>& xv = t.val(x);
  Grid<S> out(xv.h, xv.w, 1);
  for (int y = 0; y < xv.h; ++y)
    for (int xx = 0; xx < xv.w; ++xx) {
      S s = 0;
      for (int c = 0; c < xv.c; ++c) s += xv.at(y, xx, c);
      out.at(y, xx, 0) = s;
    }
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    Grid<S>& gx = tp.grad(x);
    const Grid<S>& go = tp.grad(self);
    for (int y = 0; y < gx.h; ++y)
      for (int xx = 0; xx < gx.w; ++xx)
        for (int c = 0; c < gx.c; ++c) gx.at(y, xx, c) += go.at(y, xx, 0);
  });
}

// Expectation over channels with fixed per-channel weights (soft-argmin etc.).
template <class S>
Var expect_c(Tape<S>& t, Var x, std::vector<S> weights) {
  const Grid<S>& xv = t.val(x);
  if (int(weights.size()) != xv.c) throw ContractViolation("expect_c: weight count mismatch");
  Grid<S> out(xv.h, xv.w, 1);
  for (int y = 0; y < xv.h; ++y)
    for (int xx = 0; xx < xv.w; ++xx) {
      S s = 0;
      for (int c = 0; c < xv.c; ++c) s += xv.at(y, xx, c) * weights[std::size_t(c)];
      out.at(y, xx, 0) = s;
    }
  return t.push(std::move(out), t.needs_grad(x),
                [x, ws = std::move(weights)](Tape<S>& tp, Var self) {
                  if (!tp.needs_grad(x)) return;
                  Grid<S>& gx = tp.grad(x);
                  const Grid<S>& go = tp.grad(self);
                  for (int y = 0; y < gx.h; ++y)
                    for (int xx = 0; xx < gx.w; ++xx)
                      for (int c = 0; c < gx.c; ++c)
                        gx.at(y, xx, c) += go.at(y, xx, 0) * ws[std::size_t(c)];
                });
}

// Expectation with per-pixel weights (constant grid with the same shape).
template <class S>
Var expect_grid(Tape<S>& t, Var x, const Grid<S>& weights) {
  const Grid<S>& xv = t.val(x);
  if (!xv.same_shape(weights)) throw ContractViolation("expect_grid: shape mismatch");
  Grid<S> out(xv.h, xv.w, 1);
  for (int y = 0; y < xv.h; ++y)
    for (int xx = 0; xx < xv.w; ++xx) {
      S s = 0;
      for (int c = 0; c < xv.c; ++c) s += xv.at(y, xx, c) * weights.at(y, xx, c);
      out.at(y, xx, 0) = s;
    }
  Grid<S> wk = weights;
  return t.push(std::move(out), t.needs_grad(x), [x, wk = std::move(wk)](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    Grid<S>& gx = tp.grad(x);
    const Grid<S>& go = tp.grad(self);
    for (int y = 0; y < gx.h; ++y)
      for (int xx = 0; xx < gx.w; ++xx)
        for (int c = 0; c < gx.c; ++c) gx.at(y, xx, c) += go.at(y, xx, 0) * wk.at(y, xx, c);
  });
}

template <class S>
Var max_c(Tape<S>& t, Var x) {
  const Grid<S>& xv = t.val(x);
  Grid<S> out(xv.h, xv.w, 1);
  for (int y = 0; y < xv.h; ++y)
    for (int xx = 0; xx < xv.w; ++xx) {
      S m = xv.at(y, xx, 0);
      for (int c = 1; c < xv.c; ++c) m = std::max(m, xv.at(y, xx, c));
      out.at(y, xx, 0) = m;
    }
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    Grid<S>& gx = tp.grad(x);
    const Grid<S>& go = tp.grad(self);
    const Grid<S>& xv = tp.val(x);
    for (int y = 0; y < gx.h; ++y)
      for (int xx = 0; xx < gx.w; ++xx) {
        int am = 0;
        for (int c = 1; c < xv.c; ++c)
          if (xv.at(y, xx, c) > xv.at(y, xx, am)) am = c;
        gx.at(y, xx, am) += go.at(y, xx, 0);
      }
  });
}

template <class S>
Var sum_all(Tape<S>& t, Var x) {
  Grid<S> out(1, 1, 1);
  out.v[0] = t.val(x).v.sum();
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (tp.needs_grad(x)) tp.grad(x).v += tp.grad(self).v[0];
  });
}

// ---------------------------------------------------------------- resampling

// Integer-factor bilinear upsample; output node (Y, X) samples input
// coordinate (Y/f, X/f), edge-clamped. Values multiplied by value_scale
// (disparities scale with resolution).
template <class S>
Var upsample(Tape<S>& t, Var x, int factor, S value_scale) {
  const Grid<S>& xv = t.val(x);
  Grid<S> out(xv.h * factor, xv.w * factor, xv.c);
  for (int y = 0; y < out.h; ++y) {
    const S ys = std::min(S(y) / S(factor), S(xv.h - 1));
    const int y0 = std::min(int(ys), xv.h - 1);
    const int y1 = std::min(y0 + 1, xv.h - 1);
    const S fy = ys - S(y0);
    for (int xx = 0; xx < out.w; ++xx) {
      const S xs = std::min(S(xx) / S(factor), S(xv.w - 1));
      const int x0 = std::min(int(xs), xv.w - 1);
      const int x1 = std::min(x0 + 1, xv.w - 1);
      const S fx = xs - S(x0);
      for (int c = 0; c < xv.c; ++c) {
        const S top = xv.at(y0, x0, c) * (S(1) - fx) + xv.at(y0, x1, c) * fx;
        const S bot = xv.at(y1, x0, c) * (S(1) - fx) + xv.at(y1, x1, c) * fx;
        out.at(y, xx, c) = (top * (S(1) - fy) + bot * fy) * value_scale;
      }
    }
  }
  return t.push(std::move(out), t.needs_grad(x), [x, factor, value_scale](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    Grid<S>& gx = tp.grad(x);
    const Grid<S>& go = tp.grad(self);
    for (int y = 0; y < go.h; ++y) {
      const S ys = std::min(S(y) / S(factor), S(gx.h - 1));
      const int y0 = std::min(int(ys), gx.h - 1);
      const int y1 = std::min(y0 + 1, gx.h - 1);
      const S fy = ys - S(y0);
      for (int xx = 0; xx < go.w; ++xx) {
        const S xs = std::min(S(xx) / S(factor), S(gx.w - 1));
        const int x0 = std::min(int(xs), gx.w - 1);
        const int x1 = std::min(x0 + 1, gx.w - 1);
        const S fx = xs - S(x0);
        for (int c = 0; c < gx.c; ++c) {
          const S g = go.at(y, xx, c) * value_scale;
          gx.at(y0, x0, c) += g * (S(1) - fy) * (S(1) - fx);
          gx.at(y0, x1, c) += g * (S(1) - fy) * fx;
          gx.at(y1, x0, c) += g * fy * (S(1) - fx);
          gx.at(y1, x1, c) += g * fy * fx;
        }
      }
    }
  });
}

// Nearest-node integer-stride subsample: out(y, x) = in(f*y, f*x).
template <class S>
Var stride_sample_op(Tape<S>& t, Var x, int factor) {
  const Grid<S>& xv = t.val(x);
  Grid<S> out(xv.h / factor, xv.w / factor, xv.c);
  for (int y = 0; y < out.h; ++y)
    for (int xx = 0; xx < out.w; ++xx)
      for (int c = 0; c < xv.c; ++c) out.at(y, xx, c) = xv.at(y * factor, xx * factor, c);
  return t.push(std::move(out), t.needs_grad(x), [x, factor](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    Grid<S>& gx = tp.grad(x);
    const Grid<S>& go = tp.grad(self);
    for (int y = 0; y < go.h; ++y)
      for (int xx = 0; xx < go.w; ++xx)
        for (int c = 0; c < go.c; ++c) gx.at(y * factor, xx * factor, c) += go.at(y, xx, c);
  });
}

// Adjacent-pair average over the channel axis (disparity-pyramid pooling).
template <class S>
Var avgpool_c2(Tape<S>& t, Var x) {
  const Grid<S>& xv = t.val(x);
  if (xv.c % 2 != 0) throw ContractViolation("avgpool_c2: odd channel count");
  Grid<S> out(xv.h, xv.w, xv.c / 2);
  for (int y = 0; y < xv.h; ++y)
    for (int xx = 0; xx < xv.w; ++xx)
      for (int c = 0; c < out.c; ++c)
        out.at(y, xx, c) = (xv.at(y, xx, 2 * c) + xv.at(y, xx, 2 * c + 1)) / S(2);
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    Grid<S>& gx = tp.grad(x);
    const Grid<S>& go = tp.grad(self);
    for (int y = 0; y < gx.h; ++y)
      for (int xx = 0; xx < gx.w; ++xx)
        for (int c = 0; c < go.c; ++c) {
          const S g = go.at(y, xx, c) / S(2);
          gx.at(y, xx, 2 * c) += g;
          gx.at(y, xx, 2 * c + 1) += g;
        }
  });
}

// ------------------------------------------------- matching-specific kernels

// Linear interpolation of a per-pixel profile (h, w, D) at query + offset for
// offsets in [-radius, radius]; queries clamped to [0, D-1]. Returns
// (h, w, 2*radius+1). Gradients flow into both the profile and the query.
template <class S>
Var lookup_linear_c(Tape<S>& t, Var vol, Var query, int radius,
                    double* clamp_fraction = nullptr) {
  const Grid<S>& vv = t.val(vol);
  const Grid<S>& qv = t.val(query);
  if (qv.c != 1 || qv.h != vv.h || qv.w != vv.w)
    throw ContractViolation("lookup_linear_c: query must be (h, w, 1) on the volume plane");
  if (radius < 0) throw ContractViolation("lookup_linear_c: radius must be >= 0");
  const int taps = 2 * radius + 1;
  Grid<S> out(vv.h, vv.w, taps);
  std::int64_t clamped = 0;
  for (int y = 0; y < vv.h; ++y)
    for (int xx = 0; xx < vv.w; ++xx) {
      const S q = qv.at(y, xx, 0);
      for (int o = -radius; o <= radius; ++o) {
        const S p = q + S(o);
        const S pc = std::clamp(p, S(0), S(vv.c - 1));
        if (p != pc) ++clamped;
        const int i0 = std::min(int(pc), vv.c - 2 >= 0 ? vv.c - 2 : 0);
        const int i1 = std::min(i0 + 1, vv.c - 1);
        const S f = pc - S(i0);
        out.at(y, xx, o + radius) = vv.at(y, xx, i0) * (S(1) - f) + vv.at(y, xx, i1) * f;
      }
    }
  if (clamp_fraction)
    *clamp_fraction = double(clamped) / double(std::int64_t(vv.h) * vv.w * taps);
  const bool needs = t.needs_grad(vol) || t.needs_grad(query);
  return t.push(std::move(out), needs, [vol, query, radius](Tape<S>& tp, Var self) {
    const Grid<S>& vv = tp.val(vol);
    const Grid<S>& qv = tp.val(query);
    const Grid<S>& go = tp.grad(self);
    const bool gv = tp.needs_grad(vol);
    const bool gq = tp.needs_grad(query);
    for (int y = 0; y < vv.h; ++y)
      for (int xx = 0; xx < vv.w; ++xx) {
        const S q = qv.at(y, xx, 0);
        for (int o = -radius; o <= radius; ++o) {
          const S g = go.at(y, xx, o + radius);
          if (g == S(0)) continue;
          const S p = q + S(o);
          const S pc = std::clamp(p, S(0), S(vv.c - 1));
          const int i0 = std::min(int(pc), vv.c - 2 >= 0 ? vv.c - 2 : 0);
          const int i1 = std::min(i0 + 1, vv.c - 1);
          const S f = pc - S(i0);
          if (gv) {
            tp.grad(vol).at(y, xx, i0) += g * (S(1) - f);
            tp.grad(vol).at(y, xx, i1) += g * f;
          }
          if (gq && p == pc)
            tp.grad(query).at(y, xx, 0) += g * (vv.at(y, xx, i1) - vv.at(y, xx, i0));
        }
      }
  });
}

// Samples feat at (y, x - disp(y, x)) with 1-D linear interpolation along x.
// Out-of-range samples produce zeros; *valid_out (optional) receives the
// in-range indicator.
template <class S>
Var sample_x(Tape<S>& t, Var feat, Var disp, Grid<S>* valid_out = nullptr) {
  const Grid<S>& fv = t.val(feat);
  const Grid<S>& dv = t.val(disp);
  if (dv.c != 1 || dv.h != fv.h || dv.w != fv.w)
    throw ContractViolation("sample_x: disparity must be (h, w, 1) on the feature plane");
  Grid<S> out(fv.h, fv.w, fv.c);
  Grid<S> valid(fv.h, fv.w, 1);
  for (int y = 0; y < fv.h; ++y)
    for (int xx = 0; xx < fv.w; ++xx) {
      const S xs = S(xx) - dv.at(y, xx, 0);
      if (!(xs >= S(0) && xs <= S(fv.w - 1))) continue;
      valid.at(y, xx, 0) = S(1);
      const int x0 = std::min(int(xs), fv.w - 2 >= 0 ? fv.w - 2 : 0);
      const int x1 = std::min(x0 + 1, fv.w - 1);
      const S f = xs - S(x0);
      for (int c = 0; c < fv.c; ++c)
        out.at(y, xx, c) = fv.at(y, x0, c) * (S(1) - f) + fv.at(y, x1, c) * f;
    }
  if (valid_out) *valid_out = valid;
  const bool needs = t.needs_grad(feat) || t.needs_grad(disp);
  return t.push(std::move(out), needs, [feat, disp](Tape<S>& tp, Var self) {
    const Grid<S>& fv = tp.val(feat);
    const Grid<S>& dv = tp.val(disp);
    const Grid<S>& go = tp.grad(self);
    const bool gf = tp.needs_grad(feat);
    const bool gd = tp.needs_grad(disp);
    for (int y = 0; y < fv.h; ++y)
      for (int xx = 0; xx < fv.w; ++xx) {
        const S xs = S(xx) - dv.at(y, xx, 0);
        if (!(xs >= S(0) && xs <= S(fv.w - 1))) continue;
        const int x0 = std::min(int(xs), fv.w - 2 >= 0 ? fv.w - 2 : 0);
        const int x1 = std::min(x0 + 1, fv.w - 1);
        const S f = xs - S(x0);
        for (int c = 0; c < fv.c; ++c) {
          const S g = go.at(y, xx, c);
          if (g == S(0)) continue;
          if (gf) {
            tp.grad(feat).at(y, x0, c) += g * (S(1) - f);
            tp.grad(feat).at(y, x1, c) += g * f;
          }
          if (gd) tp.grad(disp).at(y, xx, 0) -= g * (fv.at(y, x1, c) - fv.at(y, x0, c));
        }
      }
  });
}

// Channel-mean correlation volume over integer disparity candidates
// 0..num_cand-1: out(y, x, d) = mean_c FL(y, x, c) * FR(y, x-d, c). Candidates
// falling off the left edge score kOobScore (never selected by soft-argmin);
// *valid_out receives their indicator.
template <class S>
Var corr_volume(Tape<S>& t, Var fl, Var fr, int num_cand, Grid<S>* valid_out = nullptr) {
  const Grid<S>& lv = t.val(fl);
  const Grid<S>& rv = t.val(fr);
  if (!lv.same_shape(rv)) throw ContractViolation("corr_volume: feature shape mismatch");
  if (num_cand < 1) throw ContractViolation("corr_volume: need at least one candidate");
  const S inv_c = S(1) / S(lv.c);
  Grid<S> out = Grid<S>::constant(lv.h, lv.w, num_cand, kOobScore<S>);
  Grid<S> valid(lv.h, lv.w, num_cand);
  for (int y = 0; y < lv.h; ++y)
    for (int xx = 0; xx < lv.w; ++xx) {
      const S* fl_px = lv.v.data() + lv.idx(y, xx, 0);
      const int dmax = std::min(num_cand - 1, xx);
      for (int d = 0; d <= dmax; ++d) {
        const S* fr_px = rv.v.data() + rv.idx(y, xx - d, 0);
        S s = 0;
        for (int c = 0; c < lv.c; ++c) s += fl_px[c] * fr_px[c];
        out.at(y, xx, d) = s * inv_c;
        valid.at(y, xx, d) = S(1);
      }
    }
  if (valid_out) *valid_out = valid;
  const bool needs = t.needs_grad(fl) || t.needs_grad(fr);
  return t.push(std::move(out), needs, [fl, fr, num_cand, inv_c](Tape<S>& tp, Var self) {
    const Grid<S>& lv = tp.val(fl);
    const Grid<S>& rv = tp.val(fr);
    const Grid<S>& go = tp.grad(self);
    const bool gl = tp.needs_grad(fl);
    const bool gr = tp.needs_grad(fr);
    for (int y = 0; y < lv.h; ++y)
      for (int xx = 0; xx < lv.w; ++xx) {
        const int dmax = std::min(num_cand - 1, xx);
        for (int d = 0; d <= dmax; ++d) {
          const S g = go.at(y, xx, d) * inv_c;
          if (g == S(0)) continue;
          for (int c = 0; c < lv.c; ++c) {
            if (gl) tp.grad(fl).at(y, xx, c) += g * rv.at(y, xx - d, c);
            if (gr) tp.grad(fr).at(y, xx - d, c) += g * lv.at(y, xx, c);
          }
        }
      }
  });
}

// Correlation at fractional per-pixel candidates (h, w, D), bilinear along x.
// Off-image candidates score kOobScore.
template <class S>
Var local_corr(Tape<S>& t, Var fl, Var fr, const Grid<S>& samples) {
  const Grid<S>& lv = t.val(fl);
  const Grid<S>& rv = t.val(fr);
  if (!lv.same_shape(rv)) throw ContractViolation("local_corr: feature shape mismatch");
  if (samples.h != lv.h || samples.w != lv.w)
    throw ContractViolation("local_corr: sample plane mismatch");
  const S inv_c = S(1) / S(lv.c);
  Grid<S> out = Grid<S>::constant(lv.h, lv.w, samples.c, kOobScore<S>);
  for (int y = 0; y < lv.h; ++y)
    for (int xx = 0; xx < lv.w; ++xx) {
      const S* fl_px = lv.v.data() + lv.idx(y, xx, 0);
      for (int n = 0; n < samples.c; ++n) {
        const S xs = S(xx) - samples.at(y, xx, n);
        if (!(xs >= S(0) && xs <= S(lv.w - 1))) continue;
        const int x0 = std::min(int(xs), lv.w - 2 >= 0 ? lv.w - 2 : 0);
        const int x1 = std::min(x0 + 1, lv.w - 1);
        const S f = xs - S(x0);
        S s = 0;
        for (int c = 0; c < lv.c; ++c)
          s += fl_px[c] * (rv.at(y, x0, c) * (S(1) - f) + rv.at(y, x1, c) * f);
        out.at(y, xx, n) = s * inv_c;
      }
    }
  Grid<S> sm = samples;
  const bool needs = t.needs_grad(fl) || t.needs_grad(fr);
  return t.push(std::move(out), needs,
                [fl, fr, sm = std::move(sm), inv_c](Tape<S>& tp, Var self) {
                  const Grid<S>& lv = tp.val(fl);
                  const Grid<S>& rv = tp.val(fr);
                  const Grid<S>& go = tp.grad(self);
                  const bool gl = tp.needs_grad(fl);
                  const bool gr = tp.needs_grad(fr);
                  for (int y = 0; y < lv.h; ++y)
                    for (int xx = 0; xx < lv.w; ++xx)
                      for (int n = 0; n < sm.c; ++n) {
                        const S g = go.at(y, xx, n) * inv_c;
                        if (g == S(0)) continue;
                        const S xs = S(xx) - sm.at(y, xx, n);
                        if (!(xs >= S(0) && xs <= S(lv.w - 1))) continue;
                        const int x0 = std::min(int(xs), lv.w - 2 >= 0 ? lv.w - 2 : 0);
                        const int x1 = std::min(x0 + 1, lv.w - 1);
                        const S f = xs - S(x0);
                        for (int c = 0; c < lv.c; ++c) {
                          if (gl)
                            tp.grad(fl).at(y, xx, c) +=
                                g * (rv.at(y, x0, c) * (S(1) - f) + rv.at(y, x1, c) * f);
                          if (gr) {
                            tp.grad(fr).at(y, x0, c) += g * lv.at(y, xx, c) * (S(1) - f);
                            tp.grad(fr).at(y, x1, c) += g * lv.at(y, xx, c) * f;
                          }
                        }
                      }
                });
}

// Top-left crop to (h, w); inverse of replication padding.
template <class S>
Var crop(Tape<S>& t, Var x, int h, int w) {
  const Grid<S>& xv = t.val(x);
  if (h > xv.h || w > xv.w) throw ContractViolation("crop: target larger than input");
  if (h == xv.h && w == xv.w) return x;
  Grid<S> out(h, w, xv.c);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < xv.c; ++c) out.at(y, xx, c) = xv.at(y, xx, c);
  return t.push(std::move(out), t.needs_grad(x), [x, h, w](Tape<S>& tp, Var self) {
    if (!tp.needs_grad(x)) return;
    Grid<S>& gx = tp.grad(x);
    const Grid<S>& go = tp.grad(self);
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int c = 0; c < gx.c; ++c) gx.at(y, xx, c) += go.at(y, xx, c);
  });
}

// Value copy with the gradient path cut (cascade stage boundaries).
template <class S>
Var stop_grad(Tape<S>& t, Var x) {
  return t.constant(t.val(x));
}

// Mean of |x - target| over mask > 0 (target, mask constant grids).
template <class S>
Var masked_mean_abs(Tape<S>& t, Var x, const Grid<S>& target, const Grid<S>& mask) {
  const std::int64_t n = std::int64_t((mask.v > S(0)).count());
  if (n == 0) throw EmptyDomainError("masked_mean_abs: empty mask");
  Grid<S> neg = target;
  neg.v = -neg.v;
  Var d = cadd_const(t, x, neg);
  Var a = abs_op(t, d);
  Var m = cmul_const(t, a, mask);
  Var s = sum_all(t, m);
  return scale(t, s, S(1) / S(n));
}

}  // namespace duodepth::nn
