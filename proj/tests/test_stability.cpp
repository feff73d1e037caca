#include <gtest/gtest.h>

#include <random>

#include "gtnn/error.hpp"
#include "gtnn/stability.hpp"
#include "random_fixtures.hpp"

using namespace gtnn;
using namespace gtnn::testing;

namespace {

PolyMatrix single(const NCPoly& p) {
  PolyMatrix h(1, 1, p.arity());
  h.set(0, 0, p);
  return h;
}

// Term-by-term recomputation straight from the per-polynomial constants.
double layer_bound_oracle(const PolyMatrix& h, const MultiSignal& f, const MultiSignal& g,
                          const std::vector<double>& opdist) {
  double fmax = 0.0, gmax = 0.0, dmax = 0.0;
  for (int a = 0; a < f.features(); ++a) {
    double fn = 0.0, gn = 0.0, dn = 0.0;
    for (int i = 0; i < f.dim(); ++i) {
      fn += f.values()(i, a) * f.values()(i, a);
      gn += g.values()(i, a) * g.values()(i, a);
      dn += (f.values()(i, a) - g.values()(i, a)) * (f.values()(i, a) - g.values()(i, a));
    }
    fmax = std::max(fmax, std::sqrt(f.measure_weight() * fn));
    gmax = std::max(gmax, std::sqrt(g.measure_weight() * gn));
    dmax = std::max(dmax, std::sqrt(f.measure_weight() * dn));
  }
  double c_best = 0.0, op_best = 0.0;
  for (int b = 0; b < h.rows(); ++b) {
    double c_row = 0.0, op_row = 0.0;
    for (int a = 0; a < h.cols(); ++a)
      for (const auto& [w, c] : h.at(b, a).terms()) {
        c_row += std::abs(c);
        for (int j = 1; j <= h.arity(); ++j) op_row += w.count(j) * std::abs(c) * opdist[static_cast<std::size_t>(j - 1)];
      }
    c_best = std::max(c_best, c_row);
    op_best = std::max(op_best, op_row);
  }
  return dmax * c_best + std::min(fmax, gmax) * op_best;
}

OperatorTuple nudge(std::mt19937_64& rng, const OperatorTuple& t, double size) {
  std::uniform_int_distribution<std::uint64_t> s;
  return gaussian_perturbation(t, size, s(rng));
}

}  // namespace

TEST(LayerBound, ZeroWhenNothingDiffers) {
  std::mt19937_64 rng(1);
  LayerSpec h{single(random_poly(rng, 2, 2)), Activation::relu};
  auto f = random_signal(rng, 5, 1, 0.2);
  std::vector<double> zero{0.0, 0.0};
  EXPECT_EQ(layer_bound(h, f, f, zero), 0.0);
}

TEST(LayerBound, SingleVariableGivesDelta) {
  LayerSpec h{single(NCPoly::variable(2, 1)), Activation::identity};
  Matrix v = Matrix::Zero(4, 1);
  v(0, 0) = 1.0;
  MultiSignal f(v, 1.0);
  std::vector<double> opdist{0.37, 0.0};
  EXPECT_DOUBLE_EQ(layer_bound(h, f, f, opdist), 0.37);
}

TEST(LayerBound, MatchesTermByTermRecomputation) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + trial % 3, A = 1 + trial % 2, B = 1 + (trial / 2) % 3;
    PolyMatrix h(B, A, k);
    for (int b = 0; b < B; ++b)
      for (int a = 0; a < A; ++a) h.set(b, a, random_poly(rng, k, 1 + trial % 3));
    auto f = random_signal(rng, 6, A, 0.5);
    auto g = random_signal(rng, 6, A, 0.5);
    std::vector<double> opdist;
    for (int j = 0; j < k; ++j) opdist.push_back(u(rng));
    EXPECT_NEAR(layer_bound({h, Activation::relu}, f, g, opdist), layer_bound_oracle(h, f, g, opdist), 1e-12);
  }
}

TEST(LayerBound, RejectsBadInputs) {
  std::mt19937_64 rng(3);
  LayerSpec h{single(random_poly(rng, 2, 1)), Activation::relu};
  auto f = random_signal(rng, 4, 1, 1.0);
  std::vector<double> neg{-0.1, 0.0}, shortd{0.1};
  EXPECT_THROW(layer_bound(h, f, f, neg), PreconditionError);
  EXPECT_THROW(layer_bound(h, f, f, shortd), ShapeError);
  EXPECT_THROW(layer_bound(h, f, random_signal(rng, 4, 1, 0.5), std::vector<double>{0, 0}), ShapeError);
}

TEST(NetworkBound, IdenticalInputsAndTuplesGiveZero) {
  std::mt19937_64 rng(4);
  for (int depth = 1; depth <= 3; ++depth) {
    std::vector<int> sizes(static_cast<std::size_t>(depth + 1), 2);
    auto net = random_network(rng, 2, 2, sizes);
    auto t = random_nonexpansive_tuple(rng, 2, 7);
    auto f = random_signal(rng, 7, 2, 1.0 / 7);
    auto r = network_bound(net, t, t, f, f);
    EXPECT_EQ(r.empirical, 0.0);
    EXPECT_EQ(r.constant_bound, 0.0);
    EXPECT_EQ(r.bound, 0.0);
  }
}

TEST(NetworkBound, OneLayerMatchesLayerBound) {
  std::mt19937_64 rng(5);
  auto net = random_network(rng, 2, 2, {2, 3});
  auto t = random_nonexpansive_tuple(rng, 2, 6);
  auto u = nudge(rng, t, 0.2);
  auto f = random_signal(rng, 6, 2, 1.0);
  auto g = random_signal(rng, 6, 2, 1.0);
  auto r = network_bound(net, t, u, f, g);
  EXPECT_NEAR(r.constant_bound, layer_bound(net.layer(0), f, g, r.op_distance), 1e-12);
  ASSERT_EQ(r.layers.size(), 1u);
  EXPECT_NEAR(r.layers[0].signal_term + r.layers[0].operator_term, r.constant_bound, 1e-12);
}

TEST(NetworkBound, HoldsOnRandomTrials) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> pick(1, 3);
  std::uniform_real_distribution<double> size(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = pick(rng), d = pick(rng), depth = pick(rng), n = 4 + trial % 5;
    std::vector<int> sizes{pick(rng)};
    for (int l = 0; l < depth; ++l) sizes.push_back(pick(rng));
    auto net = random_network(rng, k, d, sizes);
    auto t = random_nonexpansive_tuple(rng, k, n);
    auto u = nudge(rng, t, size(rng));
    auto f = random_signal(rng, n, sizes.front(), 1.0 / n);
    MultiSignal g(f.values() + 0.3 * size(rng) * gaussian_matrix(rng, n, sizes.front()), 1.0 / n);
    auto r = network_bound(net, t, u, f, g);
    const double tol = 1e-9 * std::max(1.0, r.constant_bound);
    EXPECT_LE(r.empirical, r.constant_bound + tol) << "trial " << trial;
    EXPECT_LE(r.empirical, r.operator_bound + tol) << "trial " << trial;
    EXPECT_LE(r.empirical, r.bound + tol) << "trial " << trial;
    EXPECT_LE(r.bound, r.constant_bound);
  }
}

TEST(NetworkBound, RecursionMatchesReportAndIsMonotone) {
  std::mt19937_64 rng(7);
  auto net = random_network(rng, 2, 2, {1, 2, 2, 1});
  auto t = random_nonexpansive_tuple(rng, 2, 5);
  auto u = nudge(rng, t, 0.4);
  auto f = random_signal(rng, 5, 1, 0.2);
  auto g = random_signal(rng, 5, 1, 0.2);
  auto r = network_bound(net, t, u, f, g);
  // m_l from forward passes of the truncated networks.
  std::vector<double> norms;
  auto lf = forward_layers(net, t, {f.values()});
  auto lg = forward_layers(net, u, {g.values()});
  for (int l = 0; l < net.depth(); ++l) {
    double nf = 0.0, ng = 0.0;
    for (const auto& m : lf[static_cast<std::size_t>(l)]) nf = std::max(nf, std::sqrt(0.2 * m.squaredNorm()));
    for (const auto& m : lg[static_cast<std::size_t>(l)]) ng = std::max(ng, std::sqrt(0.2 * m.squaredNorm()));
    norms.push_back(std::min(nf, ng));
  }
  EXPECT_NEAR(recursion_bound(net, r.input_distance, norms, r.op_distance), r.constant_bound, 1e-12);
  for (std::size_t j = 0; j < 2; ++j) {
    double prev = 0.0;
    for (double d : {0.0, 0.1, 0.2, 0.5, 1.0}) {
      auto od = r.op_distance;
      od[j] = d;
      const double b = recursion_bound(net, r.input_distance, norms, od);
      EXPECT_GE(b, prev);
      prev = b;
    }
  }
}

TEST(NetworkBound, UnivariateEmbeddingAgrees) {
  std::mt19937_64 rng(8);
  NCPoly p1 = random_poly(rng, 1, 3);
  NCPoly::Terms lifted;
  for (const auto& [w, c] : p1.terms()) lifted.emplace(w, c);
  NCPoly p2(2, lifted);
  NetworkSpec n1(1, 3, {{single(p1), Activation::relu}});
  NetworkSpec n2(2, 3, {{single(p2), Activation::relu}});
  auto t1 = random_nonexpansive_tuple(rng, 1, 6);
  auto u1 = nudge(rng, t1, 0.3);
  auto extra = random_nonexpansive_tuple(rng, 2, 6);
  OperatorTuple t2({t1[0], extra[0]});
  OperatorTuple u2({u1[0], extra[1]});
  auto f = random_signal(rng, 6, 1, 1.0);
  auto g = random_signal(rng, 6, 1, 1.0);
  auto r1 = network_bound(n1, t1, u1, f, g);
  auto r2 = network_bound(n2, t2, u2, f, g);
  EXPECT_NEAR(r1.constant_bound, r2.constant_bound, 1e-12);
  EXPECT_NEAR(r1.empirical, r2.empirical, 1e-12);
}

TEST(NetworkBound, SignalTermIsTightForScalarNonnegativeFilters) {
  NCPoly h(1, {{Word{}, 0.5}, {Word{1}, 0.25}, {Word{1, 1}, 1.5}});
  NetworkSpec net(1, 2, {{single(h), Activation::identity}});
  OperatorTuple t({SymOperator(Matrix::Ones(1, 1))});
  MultiSignal f(Matrix::Constant(1, 1, 0.8), 1.0);
  MultiSignal g(Matrix::Constant(1, 1, -0.3), 1.0);
  auto r = network_bound(net, t, t, f, g);
  EXPECT_NEAR(r.empirical, 2.25 * 1.1, 1e-15);
  EXPECT_NEAR(r.constant_bound, r.empirical, 1e-15);
}

TEST(NetworkBound, RejectsUncertifiedTuples) {
  std::mt19937_64 rng(9);
  auto net = random_network(rng, 1, 1, {1, 1});
  OperatorTuple big({SymOperator(2.0 * Matrix::Identity(3, 3))});
  auto f = random_signal(rng, 3, 1, 1.0);
  EXPECT_THROW(network_bound(net, big, big, f, f), PreconditionError);
}

TEST(SimplifiedBound, CoincidesWithLayerBoundAtDepthOne) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    auto net = random_network(rng, 2, 2, {1, 1}, true, 1.0 / 7.0);
    auto t = random_nonexpansive_tuple(rng, 2, 5);
    auto u = nudge(rng, t, 0.3);
    auto f = random_signal(rng, 5, 1, 1.0);
    // Equal signals: the signal term vanishes and both forms reduce to m * sum_j C_j d_j.
    auto r = network_bound(net, t, u, f, f);
    EXPECT_NEAR(simplified_bound(net, t, u, f, f), layer_bound(net.layer(0), f, f, r.op_distance), 1e-12);
  }
}

TEST(SimplifiedBound, IdenticalTuplesGiveInputDistance) {
  std::mt19937_64 rng(11);
  auto net = random_network(rng, 2, 2, {2, 2, 2}, true, 1.0 / 14.0);
  auto t = random_nonexpansive_tuple(rng, 2, 5);
  auto f = random_signal(rng, 5, 2, 1.0);
  auto g = random_signal(rng, 5, 2, 1.0);
  EXPECT_NEAR(simplified_bound(net, t, t, f, g), box_distance(f, g), 1e-12);
}

TEST(SimplifiedBound, RejectsLargeConstantsNamingTheLayer) {
  std::mt19937_64 rng(12);
  auto net = random_network(rng, 1, 1, {1, 1, 1}, true, 0.1);
  auto polys = net.layer(1).polys;
  polys.set(0, 0, NCPoly(1, {{Word{1}, 3.0}}));
  NetworkSpec bad(1, 1, {net.layer(0), {polys, Activation::identity}});
  auto t = random_nonexpansive_tuple(rng, 1, 4);
  auto f = random_signal(rng, 4, 1, 1.0);
  try {
    simplified_bound(bad, t, t, f, f);
    FAIL() << "expected PreconditionError";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(SimplifiedBound, HoldsOnRandomAdmissibleNets) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> pick(1, 3);
  std::uniform_real_distribution<double> size(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = pick(rng), d = pick(rng), depth = pick(rng), n = 5;
    std::vector<int> sizes{pick(rng)};
    for (int l = 0; l < depth; ++l) sizes.push_back(pick(rng));
    const double words = static_cast<double>(word_count(k, d).up_to_d);
    auto net = random_network(rng, k, d, sizes, true, 1.0 / (3.0 * words));
    auto t = random_nonexpansive_tuple(rng, k, n);
    auto u = nudge(rng, t, size(rng));
    auto f = random_signal(rng, n, sizes.front(), 1.0);
    auto g = random_signal(rng, n, sizes.front(), 1.0);
    auto r = network_bound(net, t, u, f, g);
    ASSERT_TRUE(r.simplified_bound.has_value());
    EXPECT_NEAR(*r.simplified_bound, simplified_bound(net, t, u, f, g), 1e-12);
    EXPECT_LE(r.empirical, *r.simplified_bound + 1e-9 * std::max(1.0, *r.simplified_bound));
  }
}

TEST(FilterMetrics, OrderedAsTheOperatorInequalitiesSay) {
  std::mt19937_64 rng(14);
  auto net = random_network(rng, 2, 3, {2, 3, 1});
  auto t = random_nonexpansive_tuple(rng, 2, 8);
  auto z = nudge(rng, t, 0.3);
  for (const auto& m : filter_metrics(net, t, z)) {
    EXPECT_LE(m.filter_op, m.c_total * (1 + 1e-9));
    EXPECT_LE(m.diff_op, m.diff_block_bound * (1 + 1e-9));
    EXPECT_LE(m.diff_entry_bound, m.diff_block_bound);
  }
}

TEST(GaussianPerturbation, SymmetricCertifiedAndSized) {
  std::mt19937_64 rng(15);
  OperatorTuple t({SymOperator(0.5 * Matrix::Identity(10, 10)), SymOperator(Matrix::Zero(10, 10))});
  auto z = gaussian_perturbation(t, 0.2, 99);
  EXPECT_TRUE(z.nonexpansive_certified());
  for (const auto& op : z.operators()) EXPECT_TRUE(op.matrix().isApprox(op.matrix().transpose(), 0.0));
  auto d = exact_op_distance(t, z);
  EXPECT_NEAR(d[1], 0.2, 1e-9);
  auto again = gaussian_perturbation(t, 0.2, 99);
  EXPECT_EQ(again.letter(1), z.letter(1));
  EXPECT_EQ(gaussian_perturbation(t, 0.0, 99).letter(1), t.letter(1));
}

TEST(PerturbSweep, ZeroAtZeroAndGrowsWithSize) {
  std::mt19937_64 rng(16);
  std::vector<NamedNetwork> nets{{"a", random_network(rng, 2, 2, {1, 1})},
                                 {"b", random_network(rng, 2, 2, {1, 2, 1})}};
  auto t = random_nonexpansive_tuple(rng, 2, 12);
  std::vector<MultiSignal> inputs;
  for (int s = 0; s < 8; ++s) inputs.push_back(random_signal(rng, 12, 1, 1.0));
  std::vector<double> sizes{0.0, 0.1, 0.3, 0.6};
  auto rows = perturb_sweep(nets, t, inputs, sizes, 20, 7);
  ASSERT_EQ(rows.size(), 8u);
  for (std::size_t ni = 0; ni < 2; ++ni) {
    EXPECT_EQ(rows[ni * 4].empirical, 0.0);
    EXPECT_EQ(rows[ni * 4].bound, 0.0);
    for (std::size_t si = 1; si < 4; ++si) {
      const auto& r = rows[ni * 4 + si];
      EXPECT_GT(r.empirical, rows[ni * 4 + si - 1].empirical);
      EXPECT_LE(r.empirical, r.bound);
      EXPECT_LE(r.filter_diff_op, r.filter_diff_block_bound * (1 + 1e-9));
    }
  }
  auto again = perturb_sweep(nets, t, inputs, sizes, 20, 7);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].empirical, again[i].empirical);
}
