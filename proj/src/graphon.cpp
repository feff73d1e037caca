#include "gtnn/graphon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gtnn/error.hpp"
#include "gtnn/parallel.hpp"
#include "gtnn/stability.hpp"

namespace gtnn {

namespace {

constexpr int kQuadraturePoints = 64;
constexpr double kRangeSlack = 1e-12;

void check_grid(int m) {
  if (m < 1) throw PreconditionError("grid size must be >= 1");
  if (m > kMaxGridCells) throw GridCapError("grid size " + std::to_string(m) + " exceeds the cell cap");
}

Matrix repeat_rows(const Matrix& v, int factor) {
  Matrix out(v.rows() * factor, v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) out.middleRows(i * factor, factor).rowwise() = v.row(i);
  return out;
}

int refine_factor(int from, int to) {
  check_grid(to);
  if (to % from != 0) throw ShapeError("grid " + std::to_string(to) + " is not a refinement of " + std::to_string(from));
  return to / from;
}

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename F>
SymOperator er_sample(const F& w, int n, std::uint64_t seed) {
  if (n < 1) throw PreconditionError("graph size must be >= 1");
  std::mt19937_64 rng(seed);
  Matrix s = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double p = w((2.0 * i + 1.0) / (2.0 * n), (2.0 * j + 1.0) / (2.0 * n));
      if (unit_uniform(rng) < p) s(i, j) = s(j, i) = 1.0;
    }
  return SymOperator(s);
}

// Mean of f over [lo, lo + h) by the midpoint rule.
template <typename F>
double cell_mean_1d(const F& f, double lo, double h) {
  double sum = 0.0;
  for (int p = 0; p < kQuadraturePoints; ++p) sum += f(lo + (p + 0.5) * h / kQuadraturePoints);
  return sum / kQuadraturePoints;
}

std::vector<int> grids_of(std::span<const PiecewiseGraphon> ws) {
  std::vector<int> out;
  for (const auto& w : ws) out.push_back(w.grid());
  return out;
}

}  // namespace

PiecewiseGraphon::PiecewiseGraphon(Matrix values) {
  if (values.rows() != values.cols() || values.rows() == 0) throw ShapeError("graphon values must be a nonempty square matrix");
  check_grid(static_cast<int>(values.rows()));
  if (!values.allFinite()) throw PreconditionError("graphon values must be finite");
  if ((values - values.transpose()).cwiseAbs().maxCoeff() > kRangeSlack) throw ShapeError("graphon values must be symmetric");
  if (values.minCoeff() < -kRangeSlack || values.maxCoeff() > 1.0 + kRangeSlack)
    throw PreconditionError("graphon values must lie in [0, 1]");
  values_ = (0.5 * (values + values.transpose())).cwiseMax(0.0).cwiseMin(1.0);
}

double PiecewiseGraphon::operator()(double x, double y) const {
  const int m = grid();
  auto cell = [m](double t) { return std::clamp(static_cast<int>(std::floor(t * m)), 0, m - 1); };
  return values_(cell(x), cell(y));
}

PiecewiseGraphon PiecewiseGraphon::refined(int m) const {
  const int f = refine_factor(grid(), m);
  if (f == 1) return *this;
  Matrix rows = repeat_rows(values_, f);
  Matrix out = repeat_rows(rows.transpose(), f).transpose();
  return PiecewiseGraphon(std::move(out));
}

AnalyticGraphon named_graphon(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  auto param = [&]() -> double {
    if (colon == std::string::npos) throw ConfigError("graphon '" + spec + "' needs a parameter");
    try {
      std::size_t used = 0;
      double v = std::stod(spec.substr(colon + 1), &used);
      if (used != spec.size() - colon - 1) throw ConfigError("bad graphon parameter in '" + spec + "'");
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError("bad graphon parameter in '" + spec + "'");
    }
  };
  AnalyticGraphon g;
  g.name = spec;
  if (name == "product" && colon == std::string::npos) {
    g.fn = [](double x, double y) { return x * y; };
    g.lipschitz = 1.0;
  } else if (name == "min" && colon == std::string::npos) {
    g.fn = [](double x, double y) { return std::min(x, y); };
    g.lipschitz = 1.0;
  } else if (name == "constant") {
    const double p = param();
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("constant graphon needs p in [0, 1]");
    g.fn = [p](double, double) { return p; };
    g.lipschitz = 0.0;
  } else if (name == "exp") {
    const double c = param();
    if (!(c >= 0.0) || !std::isfinite(c)) throw ConfigError("exp graphon needs a finite c >= 0");
    g.fn = [c](double x, double y) { return std::exp(-c * std::abs(x - y)); };
    g.lipschitz = c;
  } else {
    throw ConfigError("unknown graphon '" + spec + "'");
  }
  std::mt19937_64 rng(17);
  for (int i = 0; i < 32; ++i) {
    const double x = unit_uniform(rng), y = unit_uniform(rng);
    const double v = g(x, y);
    if (v != g(y, x) || v < 0.0 || v > 1.0) throw ConfigError("graphon '" + spec + "' failed the symmetry/range check");
  }
  return g;
}

PiecewiseSignal::PiecewiseSignal(Matrix values) : values_(std::move(values)) {
  if (values_.rows() == 0 || values_.cols() == 0) throw ShapeError("graphon signal needs at least one cell and one feature");
  check_grid(static_cast<int>(values_.rows()));
}

PiecewiseSignal PiecewiseSignal::refined(int m) const {
  const int f = refine_factor(grid(), m);
  return f == 1 ? *this : PiecewiseSignal(repeat_rows(values_, f));
}

int common_grid(std::span<const int> grids) {
  long long l = 1;
  for (int g : grids) {
    if (g < 1) throw PreconditionError("grid size must be >= 1");
    l = std::lcm(l, static_cast<long long>(g));
    if (l > kMaxGridCells) throw GridCapError("common grid exceeds " + std::to_string(kMaxGridCells) + " cells");
  }
  return static_cast<int>(l);
}

PiecewiseGraphon induced_graphon(const SymOperator& s) {
  const Matrix& m = s.matrix();
  if (m.minCoeff() < 0.0 || m.maxCoeff() > 1.0) throw PreconditionError("induced graphon needs shift entries in [0, 1]");
  return PiecewiseGraphon(m);
}

PiecewiseSignal interpolate(const Matrix& vertex_values) { return PiecewiseSignal(vertex_values); }

Matrix averaging_matrix(int n, int m) {
  check_grid(n);
  check_grid(m);
  // Cell i of the n-grid is [i*m, (i+1)*m) and cell k of the m-grid is
  // [k*n, (k+1)*n) in units of 1/(n*m).
  Matrix p = Matrix::Zero(n, m);
  for (long long i = 0; i < n; ++i) {
    const long long lo = i * m, hi = (i + 1) * m;
    for (long long k = lo / n; k < m && k * n < hi; ++k) {
      const long long units = std::min(hi, (k + 1) * n) - std::max(lo, k * n);
      if (units > 0) p(i, k) = static_cast<double>(units) / m;
    }
  }
  return p;
}

Matrix sample_signal(const PiecewiseSignal& f, int n) {
  if (n == f.grid()) return f.values();
  return averaging_matrix(n, f.grid()) * f.values();
}

Matrix sample_signal(const std::function<double(double)>& f, int n) {
  check_grid(n);
  Matrix out(n, 1);
  for (int i = 0; i < n; ++i) out(i, 0) = cell_mean_1d(f, static_cast<double>(i) / n, 1.0 / n);
  return out;
}

PiecewiseSignal graphon_apply(const PiecewiseGraphon& w, const PiecewiseSignal& f) {
  const int grids[] = {w.grid(), f.grid()};
  const int l = common_grid(grids);
  Matrix out = w.refined(l).values() * f.refined(l).values() / static_cast<double>(l);
  return PiecewiseSignal(std::move(out));
}

double graphon_op_norm(const PiecewiseGraphon& w) {
  return exact_spectral_norm(SymOperator(w.values())) / w.grid();
}

double hs_norm(const PiecewiseGraphon& w) { return w.values().norm() / w.grid(); }

double op_dist(const PiecewiseGraphon& a, const PiecewiseGraphon& b) {
  const int grids[] = {a.grid(), b.grid()};
  const int l = common_grid(grids);
  return exact_spectral_norm(SymOperator(a.refined(l).values() - b.refined(l).values())) / l;
}

double hs_dist(const PiecewiseGraphon& a, const PiecewiseGraphon& b) {
  const int grids[] = {a.grid(), b.grid()};
  const int l = common_grid(grids);
  return (a.refined(l).values() - b.refined(l).values()).norm() / l;
}

double op_dist(const AnalyticGraphon& a, const PiecewiseGraphon& b, int resolution) {
  const int n = b.grid();
  const int r = n * std::max(1, (resolution + n - 1) / n);
  check_grid(r);
  Matrix fine(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j <= i; ++j) fine(i, j) = fine(j, i) = a((i + 0.5) / r, (j + 0.5) / r);
  return exact_spectral_norm(SymOperator(fine - b.refined(r).values())) / r;
}

double hs_dist(const AnalyticGraphon& a, const PiecewiseGraphon& b) {
  const int n = b.grid();
  const double h = 1.0 / n;
  std::vector<double> rows(static_cast<std::size_t>(n), 0.0);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ii) {
    const int i = static_cast<int>(ii);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double v = b.values()(i, j);
      double cell = 0.0;
      for (int p = 0; p < kQuadraturePoints; ++p) {
        const double x = (i + (p + 0.5) / kQuadraturePoints) * h;
        for (int q = 0; q < kQuadraturePoints; ++q) {
          const double d = a(x, (j + (q + 0.5) / kQuadraturePoints) * h) - v;
          cell += d * d;
        }
      }
      sum += cell / (kQuadraturePoints * kQuadraturePoints);
    }
    rows[ii] = sum * h * h;
  });
  return std::sqrt(std::accumulate(rows.begin(), rows.end(), 0.0));
}

SymOperator template_graph(const PiecewiseGraphon& w, int n) {
  if (n == w.grid()) return SymOperator(w.values());
  const Matrix p = averaging_matrix(n, w.grid());
  return SymOperator(p * w.values() * p.transpose());
}

SymOperator template_graph(const AnalyticGraphon& w, int n) {
  check_grid(n);
  const double h = 1.0 / n;
  Matrix s(n, n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ii) {
    const int i = static_cast<int>(ii);
    for (int j = 0; j <= i; ++j) {
      double sum = 0.0;
      for (int p = 0; p < kQuadraturePoints; ++p) {
        const double x = (i + (p + 0.5) / kQuadraturePoints) * h;
        for (int q = 0; q < kQuadraturePoints; ++q) sum += w(x, (j + (q + 0.5) / kQuadraturePoints) * h);
      }
      s(i, j) = sum / (kQuadraturePoints * kQuadraturePoints);
    }
  });
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) s(j, i) = s(i, j);
  return SymOperator(s);
}

SymOperator graphon_er(const PiecewiseGraphon& w, int n, std::uint64_t seed) { return er_sample(w, n, seed); }

SymOperator graphon_er(const AnalyticGraphon& w, int n, std::uint64_t seed) { return er_sample(w, n, seed); }

OperatorTuple graphon_tuple(std::span<const PiecewiseGraphon> ws, int m) {
  if (ws.empty()) throw ShapeError("graphon tuple needs at least one graphon");
  std::vector<SymOperator> ops;
  for (const auto& w : ws) ops.emplace_back(w.refined(m).values() / static_cast<double>(m));
  return OperatorTuple(std::move(ops));
}

OperatorTuple normalized_graph_tuple(std::span<const SymOperator> graphs) {
  if (graphs.empty()) throw ShapeError("graph tuple needs at least one graph");
  std::vector<SymOperator> ops;
  for (const auto& g : graphs) ops.emplace_back(g.matrix() / static_cast<double>(g.dim()));
  return OperatorTuple(std::move(ops));
}

TransferReport transfer_error(const NetworkSpec& net, std::span<const PiecewiseGraphon> ws,
                              std::span<const SymOperator> graphs, const PiecewiseSignal& f) {
  if (ws.size() != graphs.size() || static_cast<int>(ws.size()) != net.arity())
    throw ShapeError("need one graphon and one graph per network variable");
  const int n = graphs.front().dim();
  for (const auto& g : graphs)
    if (g.dim() != n) throw ShapeError("graphs in a tuple must share a size");
  std::vector<PiecewiseGraphon> induced;
  for (const auto& g : graphs) induced.push_back(induced_graphon(g));
  auto grids = grids_of(ws);
  grids.push_back(n);
  grids.push_back(f.grid());
  const int l = common_grid(grids);
  const double weight = 1.0 / l;

  const OperatorTuple tw = graphon_tuple(ws, l);
  const OperatorTuple tg = graphon_tuple(induced, l);
  const Matrix fl = f.refined(l).values();

  std::vector<Matrix> in_w, in_g;
  const Matrix pf = sample_signal(f, n);
  const Matrix ipf = repeat_rows(pf, l / n);
  for (Eigen::Index a = 0; a < fl.cols(); ++a) {
    in_w.emplace_back(fl.col(a));
    in_g.emplace_back(pf.col(a));
  }
  const auto lw = forward_layers(net, tw, in_w);
  const auto lg = forward_layers(net, normalized_graph_tuple(graphs), in_g);

  auto norm = [&](const std::vector<Matrix>& feats) {
    double best = 0.0;
    for (const auto& m : feats) best = std::max(best, std::sqrt(weight * m.squaredNorm()));
    return best;
  };
  auto dist = [&](const std::vector<Matrix>& x, const std::vector<Matrix>& y) {
    double best = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a)
      best = std::max(best, std::sqrt(weight * (x[a] - repeat_rows(y[a], l / n)).squaredNorm()));
    return best;
  };

  TransferReport r;
  r.grid = l;
  r.op_distance = exact_op_distance(tw, tg);
  r.discretization = norm({fl - ipf});
  r.empirical = dist(lw.back(), lg.back());
  r.output_norm = norm(lw.back());
  std::vector<double> min_norms{norm(in_w)};
  for (int layer = 1; layer < net.depth(); ++layer) {
    const auto li = static_cast<std::size_t>(layer);
    std::vector<Matrix> lifted;
    for (const auto& m : lg[li]) lifted.push_back(repeat_rows(m, l / n));
    min_norms.push_back(std::min(norm(lw[li]), norm(lifted)));
  }
  r.bound = recursion_bound(net, r.discretization, min_norms, r.op_distance);
  return r;
}

double identity_discrepancy(const NetworkSpec& net, std::span<const SymOperator> graphs, const PiecewiseSignal& f) {
  for (const auto& layer : net.layers())
    for (const auto& p : layer.polys.entries())
      if (p.has_constant_term()) throw PreconditionError("the transfer identity needs polynomials without constant terms");
  std::vector<PiecewiseGraphon> induced;
  for (const auto& g : graphs) induced.push_back(induced_graphon(g));
  const auto r = transfer_error(net, induced, graphs, f);
  return r.output_norm > 0.0 ? r.empirical / r.output_norm : r.empirical;
}

}  // namespace gtnn
