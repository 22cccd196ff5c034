#include <cmath>
#include <functional>

#include "doctest.h"
#include "duodepth/core/rng.hpp"
#include "duodepth/nn/ops.hpp"
#include "duodepth/nn/optim.hpp"

using namespace duodepth;
using namespace duodepth::nn;

namespace {

using BuildFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Central finite differences against the tape gradients, every element of
// every input, double precision.
void check_gradients(const std::vector<Grid<double>>& inputs, const BuildFn& build,
                     double tol = 1e-6, double eps = 1e-6) {
  auto eval = [&](const std::vector<Grid<double>>& in) {
    Tape<double> t;
    std::vector<Var> vars;
    for (const auto& g : in) vars.push_back(t.input(g));
    return t.val(build(t, vars)).v[0];
  };

  Tape<double> t;
  std::vector<Var> vars;
  for (const auto& g : inputs) vars.push_back(t.input(g));
  const Var loss = build(t, vars);
  t.backward(loss);

  for (std::size_t vi = 0; vi < inputs.size(); ++vi) {
    const Grid<double>& analytic = t.has_grad(vars[vi]) ? t.grad(vars[vi])
                                                        : Grid<double>(inputs[vi].h,
                                                                       inputs[vi].w,
                                                                       inputs[vi].c);
    for (std::int64_t i = 0; i < inputs[vi].size(); ++i) {
      auto in = inputs;
      in[vi].v[i] += eps;
      const double fp = eval(in);
      in[vi].v[i] -= 2 * eps;
      const double fm = eval(in);
      const double fd = (fp - fm) / (2 * eps);
      const double an = analytic.v[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      INFO("input ", vi, " elem ", i, " fd=", fd, " an=", an);
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

Grid<double> random_grid(Rng& rng, int h, int w, int c, double scale = 1.0) {
  Grid<double> g(h, w, c);
  for (std::int64_t i = 0; i < g.size(); ++i) g.v[i] = rng.normal() * scale;
  return g;
}

// Reduce any output to a scalar through fixed random weights so the full
// Jacobian is exercised.
Var weigh(Tape<double>& t, Var x, Rng& rng) {
  Grid<double> w(t.val(x).h, t.val(x).w, t.val(x).c);
  for (std::int64_t i = 0; i < w.size(); ++i) w.v[i] = rng.normal();
  return sum_all(t, cmul_const(t, x, w));
}

}  // namespace

TEST_CASE("gradcheck: conv2d stride 1 and 2") {
  Rng rng(101);
  for (int stride : {1, 2}) {
    Grid<double> x = random_grid(rng, 5, 6, 3);
    Grid<double> w = random_grid(rng, 1, 1, 3 * 3 * 3 * 2, 0.5);  // kh kw cin cout
    Grid<double> b = random_grid(rng, 1, 1, 2, 0.1);
    Rng wr(7);
    check_gradients({x, w, b}, [&, stride](Tape<double>& t, const std::vector<Var>& v) {
      Rng wrr(7);
      return weigh(t, conv2d(t, v[0], v[1], v[2], 3, 3, stride), wrr);
    });
  }
}

TEST_CASE("gradcheck: activations and arithmetic") {
  Rng rng(103);
  Grid<double> a = random_grid(rng, 3, 4, 2);
  Grid<double> b = random_grid(rng, 3, 4, 2);
  check_gradients({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
    Rng wr(11);
    Var x = mul(t, tanh_op(t, v[0]), sigmoid(t, v[1]));
    x = add(t, x, relu(t, sub(t, v[0], v[1])));
    x = scale(t, add_scalar(t, x, 0.3), 1.7);
    return weigh(t, x, wr);
  });
}

TEST_CASE("gradcheck: softmax + expectation (soft-argmin)") {
  Rng rng(107);
  Grid<double> vol = random_grid(rng, 3, 3, 6, 2.0);
  check_gradients({vol}, [](Tape<double>& t, const std::vector<Var>& v) {
    Rng wr(13);
    std::vector<double> cands;
    for (int i = 0; i < 6; ++i) cands.push_back(double(i));
    Var sm = softmax_c(t, v[0]);
    Var d = expect_c(t, sm, cands);
    return weigh(t, d, wr);
  });
}

TEST_CASE("gradcheck: lookup_linear_c in volume and query") {
  Rng rng(109);
  Grid<double> vol = random_grid(rng, 3, 4, 8);
  Grid<double> q(3, 4, 1);
  for (std::int64_t i = 0; i < q.size(); ++i) q.v[i] = rng.uniform(0.3, 6.3);  // off the knots
  check_gradients({vol, q}, [](Tape<double>& t, const std::vector<Var>& v) {
    Rng wr(17);
    return weigh(t, lookup_linear_c(t, v[0], v[1], 2), wr);
  });
}

TEST_CASE("gradcheck: sample_x in features and disparity") {
  Rng rng(113);
  Grid<double> feat = random_grid(rng, 3, 8, 2);
  Grid<double> d(3, 8, 1);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 8; ++x) d.at(y, x) = rng.uniform(0.2, double(x) - 0.2);
  for (int y = 0; y < 3; ++y) d.at(y, 0) = -0.5;  // off-image: zero everywhere, zero grad
  check_gradients({feat, d}, [](Tape<double>& t, const std::vector<Var>& v) {
    Rng wr(19);
    return weigh(t, sample_x(t, v[0], v[1]), wr);
  });
}

TEST_CASE("gradcheck: corr_volume") {
  Rng rng(127);
  Grid<double> fl = random_grid(rng, 2, 6, 4);
  Grid<double> fr = random_grid(rng, 2, 6, 4);
  check_gradients({fl, fr}, [](Tape<double>& t, const std::vector<Var>& v) {
    Rng wr(23);
    Grid<double> valid;
    Var vol = corr_volume(t, v[0], v[1], 4, &valid);
    // weigh only the valid entries; sentinel entries are constants
    Grid<double> w(valid.h, valid.w, valid.c);
    Rng wr2(29);
    for (std::int64_t i = 0; i < w.size(); ++i) w.v[i] = valid.v[i] * wr2.normal();
    return sum_all(t, cmul_const(t, vol, w));
  });
}

TEST_CASE("gradcheck: local_corr at fractional samples") {
  Rng rng(131);
  Grid<double> fl = random_grid(rng, 2, 7, 3);
  Grid<double> fr = random_grid(rng, 2, 7, 3);
  Grid<double> samples(2, 7, 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 7; ++x)
      for (int n = 0; n < 3; ++n) samples.at(y, x, n) = rng.uniform(0.1, std::max(0.2, x - 0.1));
  // weigh only in-range candidates; sentinel entries are large constants that
  // would swamp the finite differences
  Grid<double> w(2, 7, 3);
  Rng wr2(31);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 7; ++x)
      for (int n = 0; n < 3; ++n) {
        const double xs = x - samples.at(y, x, n);
        w.at(y, x, n) = (xs >= 0 && xs <= 6) ? wr2.normal() : 0.0;
      }
  check_gradients({fl, fr}, [samples, w](Tape<double>& t, const std::vector<Var>& v) {
    return sum_all(t, cmul_const(t, local_corr(t, v[0], v[1], samples), w));
  });
}

TEST_CASE("gradcheck: resampling and reductions") {
  Rng rng(137);
  Grid<double> x = random_grid(rng, 3, 4, 4);
  check_gradients({x}, [](Tape<double>& t, const std::vector<Var>& v) {
    Rng wr(37);
    Var up = upsample(t, v[0], 2, 2.0);
    Var pooled = avgpool_c2(t, v[0]);
    Var s = add(t, weigh(t, up, wr), weigh(t, pooled, wr));
    return add(t, s, weigh(t, sum_c(t, v[0]), wr));
  });
}

TEST_CASE("gradcheck: concat, slice, blend, clamp, abs") {
  Rng rng(139);
  Grid<double> a = random_grid(rng, 3, 3, 2);
  Grid<double> b = random_grid(rng, 3, 3, 3);
  Grid<double> mask(3, 3, 1);
  for (std::int64_t i = 0; i < mask.size(); ++i) mask.v[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  check_gradients({a, b}, [mask](Tape<double>& t, const std::vector<Var>& v) {
    Rng wr(41);
    Var cat = concat_c(t, {v[0], v[1]});
    Var sl = slice_c(t, cat, 1, 3);
    Var bl = blend_mask(t, sl, mask, 0.25);
    Var cl = clamp_op(t, bl, -0.8, 0.8);
    return weigh(t, abs_op(t, cl), wr);
  });
}

TEST_CASE("gradcheck: masked_mean_abs") {
  Rng rng(149);
  Grid<double> x = random_grid(rng, 4, 4, 1);
  Grid<double> target = random_grid(rng, 4, 4, 1);
  Grid<double> mask(4, 4, 1);
  for (std::int64_t i = 0; i < mask.size(); ++i) mask.v[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
  check_gradients({x}, [target, mask](Tape<double>& t, const std::vector<Var>& v) {
    return masked_mean_abs(t, v[0], target, mask);
  });
}

TEST_CASE("shared parameter leaves accumulate gradients") {
  ParamStore<double> store;
  Rng rng(151);
  init_conv(store, "enc", 3, 3, 2, 2, rng);
  Tape<double> t;
  Grid<double> xa = random_grid(rng, 4, 4, 2);
  Grid<double> xb = random_grid(rng, 4, 4, 2);
  Var w1 = t.param(store, "enc.w");
  Var b1 = t.param(store, "enc.b");
  Var w2 = t.param(store, "enc.w");  // second use, separate leaf
  Var b2 = t.param(store, "enc.b");
  Var ya = conv2d(t, t.input(xa), w1, b1, 3, 3, 1);
  Var yb = conv2d(t, t.input(xb), w2, b2, 3, 3, 1);
  Var loss = sum_all(t, add(t, ya, yb));
  t.backward(loss);
  store.zero_grad();
  t.flush_param_grads(store);

  // against single-use-with-added-inputs equivalence
  Tape<double> t2;
  Var w = t2.param(store, "enc.w");
  Var b = t2.param(store, "enc.b");
  Var y = conv2d(t2, add(t2, t2.input(xa), t2.input(xb)), w, b, 3, 3, 1);
  // conv is linear in x, so conv(xa)+conv(xb) = conv(xa+xb) + bias correction
  Var loss2 = sum_all(t2, y);
  t2.backward(loss2);
  ParamStore<double> store2;
  Rng rng2(151);
  init_conv(store2, "enc", 3, 3, 2, 2, rng2);
  store2.zero_grad();
  t2.flush_param_grads(store2);
  const auto& g1 = store.at("enc.w").grad;
  const auto& g2 = store2.at("enc.w").grad;
  for (std::int64_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-9));
}

TEST_CASE("one-cycle schedule: rises to exact peak then falls") {
  OneCycleSchedule sch;
  sch.lr_max = 2e-4;
  sch.total_steps = 1000;
  double peak = 0;
  double prev = 0;
  bool rising_done = false;
  for (int s = 0; s < 1000; ++s) {
    const double lr = sch.lr_at(s);
    peak = std::max(peak, lr);
    if (s > 0 && lr < prev) rising_done = true;
    if (!rising_done && s > 0) CHECK(lr >= prev);
    if (rising_done) CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
  CHECK(peak == doctest::Approx(sch.lr_max).epsilon(1e-12));
  CHECK(sch.lr_at(sch.peak_step()) == sch.lr_max);
  // closed-form spot checks
  const int sp = sch.peak_step();
  CHECK(sch.lr_at(0) == doctest::Approx(sch.lr_max / sch.div_factor));
  const double u = double(700 - sp) / double(999 - sp);
  const double lrf = sch.lr_max / sch.final_div_factor;
  CHECK(sch.lr_at(700) ==
        doctest::Approx(lrf + (sch.lr_max - lrf) * 0.5 * (1 + std::cos(M_PI * u))));
}

TEST_CASE("gradient clipping clamps every component") {
  ParamStore<float> store;
  auto& p = store.create("p", {8});
  for (int i = 0; i < 8; ++i) p.grad[i] = float(i - 4) * 0.7f;
  clip_gradients(store, -1.0f, 1.0f);
  CHECK(gradients_within(store, -1.0f, 1.0f));
  CHECK(p.grad[0] == -1.0f);                                   // -2.8 clipped
  CHECK(p.grad[7] == 1.0f);                                    // +2.1 clipped
  CHECK(p.grad[5] == doctest::Approx(0.7f).epsilon(1e-6));     // in range, untouched
}

TEST_CASE("adamw takes a finite step and decays weights") {
  ParamStore<float> store;
  auto& p = store.create("p", {4});
  p.value.setConstant(1.0f);
  p.grad.setConstant(0.5f);
  AdamW<float> opt;
  opt.weight_decay = 0.1;
  opt.step(store, 1e-2);
  CHECK(opt.steps_taken() == 1);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::isfinite(p.value[i]));
    CHECK(p.value[i] < 1.0f);  // moved against the gradient and decayed
  }
}
