#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gtnn/error.hpp"
#include "gtnn/network.hpp"

using namespace gtnn;

namespace {

Matrix random_mat(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> g;
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

OperatorTuple random_tuple(std::mt19937_64& rng, int k, int n) {
  std::vector<SymOperator> ops;
  for (int j = 0; j < k; ++j) ops.push_back(normalize_nonexpansive(SymOperator(random_mat(rng, n, n))));
  return OperatorTuple(ops);
}

NetworkShape shape(int k, int d, std::vector<int> sizes, std::vector<Activation> acts = {}) {
  NetworkShape s;
  s.arity = k;
  s.degree = d;
  s.feature_sizes = std::move(sizes);
  s.activations = std::move(acts);
  return s;
}

SampleSet random_samples(std::mt19937_64& rng, int count, int n, int a0, int an, bool masked = false) {
  SampleSet out;
  std::bernoulli_distribution coin(0.6);
  for (int s = 0; s < count; ++s) {
    Sample smp{MultiSignal(random_mat(rng, n, a0), 1.0 / n), MultiSignal(random_mat(rng, n, an), 1.0 / n), {}};
    if (masked) {
      Matrix m(n, an);
      for (int i = 0; i < n; ++i)
        for (int b = 0; b < an; ++b) m(i, b) = coin(rng) ? 1.0 : 0.0;
      m(0, 0) = 1.0;
      smp.mask = m;
    }
    out.push_back(std::move(smp));
  }
  return out;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return worst;
}

}  // namespace

TEST(Network, ParameterCounts) {
  EXPECT_EQ(init_network(shape(2, 3, {1, 1}), 1.0, 0).parameter_count(), 15u);
  EXPECT_EQ(init_network(shape(2, 3, {1, 2, 1}), 1.0, 0).parameter_count(), 60u);
  EXPECT_EQ(init_network(shape(2, 2, {1, 1}), 1.0, 0).parameter_count(), 7u);
  EXPECT_EQ(init_network(shape(1, 6, {1, 1}), 1.0, 0).parameter_count(), 7u);
}

TEST(Network, InitDeterministicAndScaled) {
  auto a = init_network(shape(2, 2, {2, 3, 1}), 2.0, 42);
  auto b = init_network(shape(2, 2, {2, 3, 1}), 2.0, 42);
  EXPECT_EQ(a.coefficients(), b.coefficients());
  EXPECT_NE(a.coefficients(), init_network(shape(2, 2, {2, 3, 1}), 2.0, 43).coefficients());
  auto c = a.coefficients();
  // Layer 0 bound 2 / (7 * 2), layer 1 bound 2 / (7 * 3).
  for (std::size_t i = 0; i < 42; ++i) EXPECT_LE(std::abs(c[i]), 2.0 / 14.0);
  for (std::size_t i = 42; i < c.size(); ++i) EXPECT_LE(std::abs(c[i]), 2.0 / 21.0);
  auto z = init_network(shape(2, 2, {1, 1}), 0.0, 1);
  for (double v : z.coefficients()) EXPECT_EQ(v, 0.0);
  std::mt19937_64 rng(1);
  auto t = random_tuple(rng, 2, 4);
  auto y = predict(z, t, MultiSignal(random_mat(rng, 4, 1), 1.0));
  EXPECT_EQ(y.values(), Matrix::Zero(4, 1));
}

TEST(Network, CoefficientRoundTrip) {
  auto net = init_network(shape(3, 2, {2, 2, 1}), 1.0, 5);
  auto c = net.coefficients();
  EXPECT_EQ(net.with_coefficients(c).coefficients(), c);
  EXPECT_THROW(net.with_coefficients(std::vector<double>(3, 0.0)), ShapeError);
}

TEST(Network, Validation) {
  std::vector<LayerSpec> bad{{PolyMatrix(2, 1, 2), Activation::relu}, {PolyMatrix(1, 3, 2), Activation::identity}};
  EXPECT_THROW(NetworkSpec(2, 2, bad), ShapeError);
  PolyMatrix deep(1, 1, 2);
  deep.set(0, 0, NCPoly(2, {{Word{1, 1, 1}, 1.0}}));
  EXPECT_THROW(NetworkSpec(2, 2, {{deep, Activation::relu}}), ShapeError);
  EXPECT_THROW(NetworkSpec(2, 3, {{deep, Activation::relu}}, {Word{}, Word{1}}), ShapeError);
  EXPECT_EQ(parse_activation("relu"), Activation::relu);
  EXPECT_THROW(parse_activation("tanh"), ConfigError);
}

TEST(Forward, Examples) {
  std::mt19937_64 rng(2);
  auto t = random_tuple(rng, 2, 5);
  PolyMatrix id(1, 1, std::vector<NCPoly>{NCPoly::unit(2)});
  NetworkSpec net(2, 2, {{id, Activation::relu}});
  Matrix x = random_mat(rng, 5, 1);
  auto y = predict(net, t, MultiSignal(x, 1.0));
  EXPECT_EQ(y.values(), Matrix(x.cwiseMax(0.0)));
  auto rnd = init_network(shape(2, 2, {1, 3, 2}, {Activation::relu, Activation::relu}), 3.0, 9);
  auto zero = predict(rnd, t, MultiSignal(Matrix::Zero(5, 1), 1.0));
  EXPECT_EQ(zero.values(), Matrix::Zero(5, 2));
  EXPECT_THROW(predict(rnd, t, MultiSignal(Matrix::Zero(5, 2), 1.0)), ShapeError);
}

TEST(Forward, MatchesExplicitComposition) {
  std::mt19937_64 rng(3);
  auto t = random_tuple(rng, 2, 6);
  auto net = init_network(shape(2, 2, {2, 3, 2}, {Activation::relu, Activation::relu}), 5.0, 4);
  MultiSignal x(random_mat(rng, 6, 2), 1.0 / 6);
  auto z1 = eval_filter(net.layer(0).polys, t, x);
  MultiSignal h1(z1.values().cwiseMax(0.0), x.measure_weight());
  auto z2 = eval_filter(net.layer(1).polys, t, h1);
  Matrix expect = z2.values().cwiseMax(0.0);
  EXPECT_LE((predict(net, t, x).values() - expect).norm(), 1e-12);
}

TEST(Forward, Transference) {
  std::mt19937_64 rng(4);
  auto net = init_network(shape(2, 2, {1, 2, 1}), 2.0, 1);
  for (int n : {3, 10, 17}) {
    auto t = random_tuple(rng, 2, n);
    auto y = predict(net, t, MultiSignal(random_mat(rng, n, 1), 1.0));
    EXPECT_EQ(y.dim(), n);
    EXPECT_EQ(y.features(), 1);
  }
  auto wrong = random_tuple(rng, 3, 4);
  EXPECT_THROW(predict(net, wrong, MultiSignal(random_mat(rng, 4, 1), 1.0)), ShapeError);
}

TEST(Forward, LinearInCoefficientsWithIdentity) {
  std::mt19937_64 rng(5);
  auto t = random_tuple(rng, 2, 5);
  auto a = init_network(shape(2, 2, {2, 3}, {Activation::identity}), 1.0, 1);
  auto b = init_network(shape(2, 2, {2, 3}, {Activation::identity}), 1.0, 2);
  auto ca = a.coefficients(), cb = b.coefficients();
  std::vector<double> sum(ca.size());
  for (std::size_t i = 0; i < ca.size(); ++i) sum[i] = ca[i] + cb[i];
  MultiSignal x(random_mat(rng, 5, 2), 1.0);
  Matrix lhs = predict(a.with_coefficients(sum), t, x).values();
  Matrix rhs = predict(a, t, x).values() + predict(b, t, x).values();
  EXPECT_LE((lhs - rhs).norm(), 1e-12);
}

TEST(Forward, ReluContraction) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    MultiSignal f(random_mat(rng, 7, 3), 1.0 / 7), g(random_mat(rng, 7, 3), 1.0 / 7);
    MultiSignal rf(f.values().cwiseMax(0.0), f.measure_weight()), rg(g.values().cwiseMax(0.0), g.measure_weight());
    EXPECT_LE(box_distance(rf, rg), box_distance(f, g) + 1e-15);
  }
}

TEST(Backward, FiniteDifferences) {
  std::mt19937_64 rng(7);
  int checked = 0;
  for (int trial = 0; checked < 20 && trial < 200; ++trial) {
    const int k = 1 + trial % 3, d = 1 + trial % 3, n = 4;
    std::vector<int> sizes{1 + trial % 2, 2, 1 + (trial / 2) % 2};
    auto net = init_network(shape(k, d, sizes, {Activation::relu, Activation::identity}), 3.0, trial);
    auto t = random_tuple(rng, k, n);
    auto set = random_samples(rng, 2, n, sizes.front(), sizes.back());
    bool kink = false;
    for (const auto& s : set) {
      auto fr = forward(net, t, s.input);
      for (const auto& z : fr.cache.pre_activations)
        if ((z.values().array().abs() < 1e-4).any()) kink = true;
    }
    if (kink) continue;
    auto ref = reference_objective(net, t, set);
    auto c = net.coefficients();
    const double h = 1e-6;
    for (std::size_t i = 0; i < c.size(); ++i) {
      auto cp = c, cm = c;
      cp[i] += h;
      cm[i] -= h;
      double fp = reference_objective(net.with_coefficients(cp), t, set).loss;
      double fm = reference_objective(net.with_coefficients(cm), t, set).loss;
      double fd = (fp - fm) / (2 * h);
      double scale = std::max({std::abs(fd), std::abs(ref.gradient[i]), 1e-3});
      EXPECT_LT(std::abs(fd - ref.gradient[i]) / scale, 1e-5) << "coordinate " << i;
    }
    ++checked;
  }
  EXPECT_EQ(checked, 20);
}

TEST(Backward, LinearClosedForm) {
  std::mt19937_64 rng(8);
  const int n = 5;
  auto t = random_tuple(rng, 2, n);
  auto net = init_network(shape(2, 2, {1, 1}, {Activation::identity}), 1.0, 3);
  auto set = random_samples(rng, 3, n, 1, 1);
  auto ref = reference_objective(net, t, set);
  const double count = 3.0 * n;
  std::size_t wi = 0;
  for (const auto& w : net.support()) {
    double g = 0.0;
    for (const auto& s : set) {
      Vector yhat = predict(net, t, s.input).values().col(0);
      g += (2.0 / count) * eval_word(w, t, s.input.values().col(0)).dot(yhat - s.target.values().col(0));
    }
    EXPECT_NEAR(ref.gradient[wi++], g, 1e-12);
  }
}

TEST(Backward, ZeroUpstreamAndStaleCache) {
  std::mt19937_64 rng(9);
  auto t = random_tuple(rng, 2, 4);
  auto net = init_network(shape(2, 2, {1, 2, 1}), 1.0, 3);
  MultiSignal x(random_mat(rng, 4, 1), 1.0);
  auto fr = forward(net, t, x);
  auto g = backward(net, t, fr.cache, MultiSignal(Matrix::Zero(4, 1), 1.0));
  for (double v : g) EXPECT_EQ(v, 0.0);
  auto other = init_network(shape(2, 2, {1, 2, 1}), 1.0, 4);
  EXPECT_THROW(backward(other, t, fr.cache, MultiSignal(Matrix::Ones(4, 1), 1.0)), PreconditionError);
}

TEST(Loss, Mse) {
  Matrix a(1, 1), b(1, 1);
  a << 3;
  b << 1;
  EXPECT_EQ(mse_loss(MultiSignal(a, 1.0), MultiSignal(b, 1.0)).loss, 4.0);
  EXPECT_EQ(mse_loss(MultiSignal(a, 1.0), MultiSignal(a, 1.0)).loss, 0.0);
  Matrix y(3, 1), yh(3, 1), mask(3, 1);
  y << 1, 2, 3;
  yh << 1, 1e6, 4;
  mask << 1, 0, 1;
  EXPECT_EQ(mse_loss(MultiSignal(yh, 1.0), MultiSignal(y, 1.0), &mask).loss, 0.5);
  Matrix none = Matrix::Zero(3, 1);
  EXPECT_THROW(mse_loss(MultiSignal(yh, 1.0), MultiSignal(y, 1.0), &none), PreconditionError);
}

TEST(Loss, RSquared) {
  Matrix y(4, 1);
  y << 1, 2, 3, 6;
  EXPECT_EQ(r_squared(MultiSignal(y, 1.0), MultiSignal(y, 1.0)), 1.0);
  EXPECT_NEAR(r_squared(MultiSignal(Matrix::Constant(4, 1, 3.0), 1.0), MultiSignal(y, 1.0)), 0.0, 1e-15);
  EXPECT_THROW(r_squared(MultiSignal(y, 1.0), MultiSignal(Matrix::Ones(4, 1), 1.0)), PreconditionError);
}

TEST(ExpansionVectors, Examples) {
  auto zero = init_network(shape(2, 2, {2, 2}), 0.0, 0);
  auto ez = expansion_vectors(zero);
  EXPECT_EQ(ez.c_total, std::vector<double>{0.0});
  PolyMatrix h(1, 1, std::vector<NCPoly>{NCPoly(2, {{Word{1, 2, 1}, -5.0}, {Word{1, 1, 2}, 3.0}})});
  auto ev = expansion_vectors(NetworkSpec(2, 3, {{h, Activation::identity}}));
  EXPECT_EQ(ev.c_total, std::vector<double>{8.0});
  EXPECT_EQ(ev.c_per_var[0], std::vector<double>{16.0});
  EXPECT_EQ(ev.c_per_var[1], std::vector<double>{8.0});
  PolyMatrix row(1, 2, std::vector<NCPoly>{NCPoly::variable(1, 1), NCPoly(1, {{Word{}, -2.0}})});
  EXPECT_EQ(expansion_vectors(NetworkSpec(1, 1, {{row, Activation::identity}})).c_total, std::vector<double>{3.0});
}

TEST(Penalty, Examples) {
  PolyMatrix h(1, 1, std::vector<NCPoly>{NCPoly(1, {{Word{1}, 2.0}})});
  NetworkSpec net(1, 1, {{h, Activation::identity}});
  TrainConfig cfg;
  cfg.lambda = 10.0;
  cfg.c_total_targets = std::vector<double>{1.0};
  cfg.c_per_var_targets = std::vector<std::vector<double>>{{5.0}};
  auto p = penalty(net, cfg);
  EXPECT_EQ(p.value, 10.0);
  EXPECT_EQ(p.subgradient, (std::vector<double>{0.0, 10.0}));
  cfg.c_total_targets = std::vector<double>{3.0};
  auto slack = penalty(net, cfg);
  EXPECT_EQ(slack.value, 0.0);
  EXPECT_EQ(slack.subgradient, (std::vector<double>{0.0, 0.0}));
  TrainConfig missing;
  missing.lambda = 1.0;
  EXPECT_THROW(penalty(net, missing), ConfigError);
}

TEST(Penalty, SubgradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    auto net = init_network(shape(2, 2, {2, 3, 1}), 4.0, 100 + trial);
    TrainConfig cfg;
    cfg.lambda = 3.0;
    cfg.c_total_targets = std::vector<double>{0.1, 0.2};
    cfg.c_per_var_targets = std::vector<std::vector<double>>{{0.05, 0.1}, {0.1, 0.05}};
    auto p = penalty(net, cfg);
    auto c = net.coefficients();
    const double h = 1e-6;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (std::abs(c[i]) < 1e-4) continue;
      auto cp = c, cm = c;
      cp[i] += h;
      cm[i] -= h;
      double fd = (penalty(net.with_coefficients(cp), cfg).value - penalty(net.with_coefficients(cm), cfg).value) / (2 * h);
      EXPECT_LT(std::abs(fd - p.subgradient[i]) / std::max(1.0, std::abs(fd)), 1e-5);
    }
  }
}

TEST(Adam, SingleStepByHand) {
  // f(p) = (p - 3)^2 at p = 0: g = -6, m = -0.6, v = 0.036, m_hat = -6, v_hat = 36.
  TrainConfig cfg;
  std::vector<double> p{0.0};
  std::vector<double> g{-6.0};
  AdamState st;
  adam_update(p, g, st, cfg);
  EXPECT_NEAR(st.m[0], -0.6, 1e-15);
  EXPECT_NEAR(st.v[0], 0.036, 1e-15);
  EXPECT_NEAR(p[0], 0.01 * 6.0 / (6.0 + 1e-8), 1e-15);
  // Second step with gradient -4: m = -0.94, v = 0.051964.
  std::vector<double> g2{-4.0};
  adam_update(p, g2, st, cfg);
  double mhat = -0.94 / (1 - 0.81), vhat = (0.999 * 0.036 + 0.001 * 16) / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[0], 0.01 * 6.0 / (6.0 + 1e-8) - 0.01 * mhat / (std::sqrt(vhat) + 1e-8), 1e-15);
}

TEST(BatchObjective, MatchesReference) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    const int k = 1 + trial % 3, d = trial % 4, n = 5;
    std::vector<int> sizes = trial % 2 ? std::vector<int>{2, 3, 1} : std::vector<int>{1, 2, 2, 1};
    auto net = init_network(shape(k, d, sizes), 3.0, trial);
    auto t = random_tuple(rng, k, n);
    auto set = random_samples(rng, 4, n, sizes.front(), sizes.back(), trial % 3 == 0);
    auto ref = reference_objective(net, t, set);
    BatchObjective batch(net, t, set);
    std::vector<double> g;
    double loss = batch.evaluate(net.coefficients(), &g);
    EXPECT_NEAR(loss, ref.loss, 1e-12 * std::max(1.0, ref.loss));
    EXPECT_LT(max_rel_err(g, ref.gradient), 1e-12);
    auto preds = batch.predictions(net.coefficients());
    for (std::size_t s = 0; s < set.size(); ++s)
      EXPECT_LE((preds[s] - predict(net, t, set[s].input).values()).norm(), 1e-12);
  }
}

TEST(BatchObjective, RestrictedSupport) {
  std::mt19937_64 rng(12);
  NetworkShape s = shape(2, 3, {1, 1}, {Activation::identity});
  s.support = {Word{}, Word{2, 1}, Word{1, 1, 2}};
  auto net = init_network(s, 1.0, 3);
  EXPECT_EQ(net.parameter_count(), 3u);
  auto t = random_tuple(rng, 2, 5);
  auto set = random_samples(rng, 3, 5, 1, 1);
  auto ref = reference_objective(net, t, set);
  std::vector<double> g;
  double loss = BatchObjective(net, t, set).evaluate(net.coefficients(), &g);
  EXPECT_NEAR(loss, ref.loss, 1e-12);
  EXPECT_LT(max_rel_err(g, ref.gradient), 1e-12);
}

TEST(Train, LambdaZeroIsUnconstrainedAndDeterministic) {
  std::mt19937_64 rng(13);
  auto t = random_tuple(rng, 2, 6);
  auto set = random_samples(rng, 5, 6, 1, 1);
  auto net = init_network(shape(2, 2, {1, 2, 1}), 2.0, 7);
  TrainConfig a;
  a.epochs = 30;
  TrainConfig b = a;
  b.c_total_targets = std::vector<double>{0.0, 0.0};
  auto ra = train(net, t, set, a);
  auto rb = train(net, t, set, b);
  ASSERT_EQ(ra.history.size(), 30u);
  EXPECT_EQ(ra.net.coefficients(), rb.net.coefficients());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
    EXPECT_EQ(ra.history[i].penalty, 0.0);
  }
  EXPECT_LT(ra.history.back().train_loss, ra.history.front().train_loss);
}

TEST(Train, PenaltyPullsConstantsDown) {
  std::mt19937_64 rng(14);
  auto t = random_tuple(rng, 2, 6);
  auto set = random_samples(rng, 5, 6, 1, 1);
  auto net = init_network(shape(2, 2, {1, 1}), 20.0, 7);
  TrainConfig cfg;
  cfg.epochs = 400;
  cfg.lambda = 10.0;
  cfg.c_total_targets = std::vector<double>{0.5};
  auto r = train(net, t, set, cfg);
  EXPECT_LE(expansion_vectors(r.net).c_total[0], 0.5 + 0.05);
}

TEST(Train, NonFiniteLossAborts) {
  std::mt19937_64 rng(15);
  auto t = random_tuple(rng, 1, 3);
  SampleSet set{{MultiSignal(Matrix::Constant(3, 1, std::nan("")), 1.0), MultiSignal(Matrix::Ones(3, 1), 1.0), {}}};
  auto net = init_network(shape(1, 1, {1, 1}), 1.0, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  try {
    train(net, t, set, cfg);
    FAIL();
  } catch (const NonFiniteLossError& e) {
    EXPECT_EQ(e.epoch(), 1);
  }
}
