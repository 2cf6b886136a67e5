// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "explicit3d/diffcore.hpp"
#include "explicit3d/verify/oracles.hpp"

using namespace explicit3d;
using namespace explicit3d::diff;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                               double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

using Fn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct OpCase {
  const char* name;
  std::size_t arity;
  double lo;
  double hi;
  Fn f;
};

// Each case reduces to a scalar through a fixed random projection so that all
// output components contribute.
std::vector<OpCase> op_cases() {
  auto proj = [](Tape& t, const Var& v) {
    std::vector<double> w(v.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.17 * static_cast<double>(i % 7);
    return dot(v, t.constant(w));
  };
  return {
      {"add", 2, -1, 1, [=](Tape& t, auto& x) { return proj(t, x[0] + x[1]); }},
      {"sub", 2, -1, 1, [=](Tape& t, auto& x) { return proj(t, x[0] - x[1]); }},
      {"mul", 2, -1, 1, [=](Tape& t, auto& x) { return proj(t, x[0] * x[1]); }},
      {"div", 2, 0.5, 2, [=](Tape& t, auto& x) { return proj(t, x[0] / x[1]); }},
      {"relu", 1, -1, 1, [=](Tape& t, auto& x) { return proj(t, relu(x[0])); }},
      {"sigmoid", 1, -3, 3, [=](Tape& t, auto& x) { return proj(t, sigmoid(x[0])); }},
      {"tanh", 1, -2, 2, [=](Tape& t, auto& x) { return proj(t, tanh(x[0])); }},
      {"exp", 1, -2, 2, [=](Tape& t, auto& x) { return proj(t, exp(x[0])); }},
      {"log", 1, 0.2, 3, [=](Tape& t, auto& x) { return proj(t, log(x[0])); }},
      {"sin", 1, -3, 3, [=](Tape& t, auto& x) { return proj(t, sin(x[0])); }},
      {"cos", 1, -3, 3, [=](Tape& t, auto& x) { return proj(t, cos(x[0])); }},
      {"abs", 1, -1, 1, [=](Tape& t, auto& x) { return proj(t, abs(x[0])); }},
      {"sqrt", 1, 0.2, 3, [=](Tape& t, auto& x) { return proj(t, sqrt(x[0])); }},
      {"square", 1, -2, 2, [=](Tape& t, auto& x) { return proj(t, square(x[0])); }},
      {"atan2", 2, 0.2, 2, [=](Tape& t, auto& x) { return proj(t, atan2(x[0], x[1])); }},
      {"minimum", 2, -1, 1, [=](Tape& t, auto& x) { return proj(t, minimum(x[0], x[1])); }},
      {"maximum", 2, -1, 1, [=](Tape& t, auto& x) { return proj(t, maximum(x[0], x[1])); }},
      {"softmax", 1, -2, 2, [=](Tape& t, auto& x) { return proj(t, softmax(x[0])); }},
      {"l2norm", 1, -1, 1, [](Tape&, auto& x) { return l2norm(x[0]); }},
      {"mean", 1, -1, 1, [](Tape&, auto& x) { return mean(x[0]); }},
      {"dot", 2, -1, 1, [](Tape&, auto& x) { return dot(x[0], x[1]); }},
      {"concat_slice", 2, -1, 1,
       [=](Tape& t, auto& x) {
         const Var c = concat({x[0], x[1]});
         return proj(t, slice(c, 1, c.size() - 2)) + element(c, 0) * 2.0;
       }},
      {"broadcast", 2, 0.5, 1.5,
       [=](Tape& t, auto& x) { return proj(t, x[0] * element(x[1], 0) + element(x[1], 1)); }},
      {"scale_shift", 1, -1, 1,
       [=](Tape& t, auto& x) { return proj(t, (x[0] * 3.0) + 1.5 - (-x[0])); }},
  };
}

}  // namespace

TEST(DiffOps, FiniteDifferenceOnRandomShapes) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> len(2, 9);
  for (const OpCase& c : op_cases()) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = len(rng);
      std::vector<std::vector<double>> inputs;
      for (std::size_t a = 0; a < c.arity; ++a) inputs.push_back(random_vec(rng, n, c.lo, c.hi));
      const auto r = oracle::check_input_gradients(inputs, c.f);
      worst = std::max(worst, r.max_rel_error);
    }
    EXPECT_LE(worst, 1e-4) << c.name;
  }
}

TEST(DiffOps, MatvecLinearAndRotate) {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + trial % 5;
    const std::size_t cols = 1 + (trial / 5) % 6;
    const auto w = random_vec(rng, rows * cols);
    const auto x = random_vec(rng, cols);
    const auto b = random_vec(rng, rows);
    const auto r = oracle::check_input_gradients(
        {w, x, b}, [rows, cols](Tape& t, const std::vector<Var>& in) {
          const Var wm(in[0].tape(), in[0].id());
          // Reinterpret the flat input as a rows x cols matrix.
          const Var m = t.push({rows, cols},
                               std::vector<double>(wm.value().begin(), wm.value().end()),
                               wm.requires_grad(), [id = wm.id()](Tape& tp, std::uint32_t self) {
                                 const auto g = tp.grad(self);
                                 auto gi = tp.grad_buffer(id);
                                 for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                               });
          return sum(square(linear(in[1], m, in[2])));
        });
    EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
  }
  for (int trial = 0; trial < 100; ++trial) {
    const auto th = random_vec(rng, 1, -3, 3);
    const auto v = random_vec(rng, 3);
    const auto r = oracle::check_input_gradients(
        {th, v}, [](Tape& t, const std::vector<Var>& in) {
          return dot(rotate_z(in[0], in[1]), t.constant({0.7, -1.1, 0.4}));
        });
    EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(DiffOps, WrapAngleHasUnitSlope) {
  Tape t;
  const Var x = t.variable({4.0});
  const Var y = wrap_angle(x);
  EXPECT_NEAR(y.item(), 4.0 - 2 * 3.14159265358979323846, 1e-12);
  t.backward(sum(y));
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Linear, IdentityMapAndZeroUpstream) {
  ParamStore store;
  Parameter& w = store.create("w", {3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Parameter& b = store.create("b", {3, 1}, Init::kZeros);
  Tape t;
  const Var x = t.constant({1.5, -2.0, 0.25});
  const Var y = linear(x, t.param(w), t.param(b));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y[i], x[i]);
  t.backward(sum(y * 0.0));
  for (double g : w.grad()) EXPECT_EQ(g, 0.0);
  for (double g : b.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Linear, ShapeMismatchThrows) {
  Tape t;
  const Var w = t.constant(std::vector<double>(6, 1.0), {2, 3});
  EXPECT_THROW(matvec(w, t.constant({1.0, 2.0})), InvalidInput);
  EXPECT_THROW(linear(t.constant({1.0, 2.0, 3.0}), w, t.constant({1.0})), InvalidInput);
  EXPECT_THROW(add(t.constant({1.0, 2.0}), t.constant({1.0, 2.0, 3.0})), InvalidInput);
}

TEST(Linear, ParameterGradientsMatchFiniteDifferences) {
  ParamStore store(3);
  Mlp mlp(store, "mlp", {5, 7, 4});
  std::mt19937_64 rng(5);
  const auto x = random_vec(rng, 5);
  const auto r = oracle::check_param_gradients(
      store, [&](Tape& t) { return sum(square(mlp(t, t.constant(x)))); }, 60, 1);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Gru, ZeroWeightsHalveState) {
  ParamStore store;
  const GruParams p = GruParams::create(store, "gru", 3, 4);
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (double& v : store[i].value()) v = 0.0;
  }
  Tape t;
  const Var h = gru_step(t, t.constant({1.0, -2.0, 0.5, 4.0}), t.constant({3.0, 1.0, 2.0}), p);
  EXPECT_DOUBLE_EQ(h[0], 0.5);
  EXPECT_DOUBLE_EQ(h[1], -1.0);
  EXPECT_DOUBLE_EQ(h[2], 0.25);
  EXPECT_DOUBLE_EQ(h[3], 2.0);
}

TEST(Gru, ZeroInputsGiveZeroState) {
  ParamStore store(8);
  const GruParams p = GruParams::create(store, "gru", 3, 4);
  Tape t;
  const Var h = gru_step(t, t.zeros(4), t.zeros(3), p);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(h[i], 0.0);
}

TEST(Gru, GradientsMatchFiniteDifferences) {
  ParamStore store(21);
  const GruParams p = GruParams::create(store, "gru", 5, 6);
  for (std::size_t i = 0; i < store.size(); ++i) {
    std::mt19937_64 rng(i);
    for (double& v : store[i].value()) v = std::uniform_real_distribution<double>(-0.8, 0.8)(rng);
  }
  std::mt19937_64 rng(77);
  const auto h0 = random_vec(rng, 6);
  const auto x = random_vec(rng, 5);
  auto f = [&](Tape& t, const Var& h, const Var& xv) {
    return dot(gru_step(t, h, xv, p), t.constant({0.3, -0.7, 1.1, 0.2, -0.4, 0.9}));
  };
  const auto pr = oracle::check_param_gradients(
      store, [&](Tape& t) { return f(t, t.constant(h0), t.constant(x)); }, 400, 3);
  EXPECT_GE(pr.checked, 200u);
  EXPECT_LE(pr.max_rel_error, 1e-4) << pr.worst;
  const auto ir = oracle::check_input_gradients(
      {h0, x}, [&](Tape& t, const std::vector<Var>& in) { return f(t, in[0], in[1]); });
  EXPECT_LE(ir.max_rel_error, 1e-4) << ir.worst;
  Tape t;
  EXPECT_THROW(gru_step(t, t.zeros(5), t.zeros(5), p), InvalidInput);
}

TEST(SoftmaxCrossEntropy, KnownValuesAndGradient) {
  Tape t;
  EXPECT_NEAR(softmax_cross_entropy(t.constant(std::vector<double>(7, 0.3)), 2).item(),
              std::log(7.0), 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(t.constant({30.0, 0.0, 0.0}), 0).item(), 0.0, 1e-12);
  EXPECT_THROW(softmax_cross_entropy(t.constant({1.0, 2.0}), 2), InvalidInput);
  const Var big = t.variable({1000.0, 999.0, -1000.0});
  const Var l = softmax_cross_entropy(big, 1);
  EXPECT_TRUE(std::isfinite(l.item()));

  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tp;
    const auto v = random_vec(rng, 6, -3, 3);
    const Var x = tp.variable(v);
    const std::size_t target = trial % 6;
    tp.backward(softmax_cross_entropy(x, target));
    double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double a : v) z += std::exp(a - mx);
    for (std::size_t i = 0; i < 6; ++i) {
      const double expected = std::exp(v[i] - mx) / z - (i == target ? 1.0 : 0.0);
      EXPECT_NEAR(x.grad()[i], expected, 1e-6);
    }
  }
}

TEST(Mse, ValuesAndGradient) {
  Tape t;
  const std::vector<double> b = {1.0, -2.0, 0.5};
  EXPECT_EQ(mse(t.constant(b), b).item(), 0.0);
  EXPECT_NEAR(mse(t.constant({2.0, -1.0, 1.5}), b).item(), 1.0, 1e-15);
  const Var a = t.variable({3.0, 0.0, -0.5});
  t.backward(mse(a, b));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(a.grad()[i], 2.0 * (a[i] - b[i]) / 3.0, 1e-6);
  }
  EXPECT_THROW(mse(a, std::vector<double>{1.0}), InvalidInput);
}

TEST(Backward, ConstantRootLeavesGradientsZero) {
  ParamStore store;
  Parameter& w = store.create("w", {2, 1}, {1.0, 2.0});
  Tape t;
  (void)t.param(w);
  t.backward(t.scalar(4.0));
  for (double g : w.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RequiresScalarRoot) {
  Tape t;
  EXPECT_THROW(t.backward(t.variable({1.0, 2.0})), InvalidInput);
}

TEST(Backward, RepeatedCallsAccumulate) {
  ParamStore store;
  Parameter& w = store.create("w", {2, 1}, {1.5, -2.0});
  Tape t;
  const Var loss = sum(square(t.param(w)));
  t.backward(loss);
  const std::vector<double> once(w.grad().begin(), w.grad().end());
  t.backward(loss);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 2.0 * once[i]);
}

TEST(Backward, NoGradientIntoConstants) {
  Tape t;
  const Var c = t.constant({1.0, 2.0});
  const Var v = t.variable({3.0, 4.0});
  t.backward(dot(c, v));
  EXPECT_TRUE(c.grad().empty());
  EXPECT_EQ(v.grad()[0], 1.0);
  EXPECT_EQ(v.grad()[1], 2.0);
}

TEST(Backward, Deterministic) {
  auto run = [] {
    ParamStore store(42);
    Mlp mlp(store, "m", {4, 8, 8, 3});
    Tape t;
    t.backward(sum(square(mlp(t, t.constant({0.1, 0.2, -0.3, 0.4})))));
    std::vector<double> g;
    for (std::size_t i = 0; i < store.size(); ++i) {
      g.insert(g.end(), store[i].grad().begin(), store[i].grad().end());
    }
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(ParamStoreTest, UniqueNamesAndSeededInit) {
  ParamStore a(1);
  a.create("x", {3, 2}, Init::kXavier);
  EXPECT_THROW(a.create("x", {1, 1}, Init::kZeros), InvalidInput);
  EXPECT_THROW(a.at("missing"), InvalidInput);
  ParamStore b(1);
  b.create("x", {3, 2}, Init::kXavier);
  EXPECT_TRUE(std::equal(a.at("x").value().begin(), a.at("x").value().end(),
                         b.at("x").value().begin()));
  EXPECT_EQ(a.scalar_count(), 6u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  Parameter& w = store.create("w", {2, 1}, {1.0, -1.0});
  w.grad()[0] = 0.5;
  w.grad()[1] = -3.0;
  adam_step(store, {}, 1);
  EXPECT_NEAR(w.value()[0], 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(w.value()[1], -1.0 + 1e-3, 1e-9);
}

TEST(Adam, MinimizesQuadratic) {
  ParamStore store;
  Parameter& w = store.create("w", {3, 1}, {2.0, -1.0, 0.5});
  AdamConfig cfg;
  cfg.lr = 0.05;
  for (std::uint64_t step = 1; step <= 2000; ++step) {
    store.zero_grad();
    Tape t;
    t.backward(sum(square(t.param(w) - 0.25)));
    adam_step(store, cfg, step);
  }
  for (double v : w.value()) EXPECT_NEAR(v, 0.25, 1e-3);
}

TEST(Checkpoint, RoundTripIsExact) {
  ParamStore a(9);
  Mlp mlp(a, "m", {3, 5, 2});
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (double& v : a[i].first_moment()) v = 1.0 / 3.0;
    for (double& v : a[i].second_moment()) v = 2.0 / 7.0;
  }
  const auto path = std::filesystem::temp_directory_path() / "explicit3d_ckpt_test.txt";
  save_checkpoint(path.string(), a, {4, 123, "abcd"});
  ParamStore b(10);
  Mlp mlp2(b, "m", {3, 5, 2});
  const CheckpointMeta meta = load_checkpoint(path.string(), b);
  EXPECT_EQ(meta.epoch, 4);
  EXPECT_EQ(meta.step, 123u);
  EXPECT_EQ(meta.config_hash, "abcd");
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].value().size(); ++k) {
      EXPECT_EQ(a[i].value()[k], b[i].value()[k]);
      EXPECT_EQ(a[i].first_moment()[k], b[i].first_moment()[k]);
      EXPECT_EQ(a[i].second_moment()[k], b[i].second_moment()[k]);
    }
  }
  ParamStore c(1);
  Mlp wrong(c, "m", {3, 4, 2});
  EXPECT_THROW(load_checkpoint(path.string(), c), std::runtime_error);
  std::filesystem::remove(path);
}
