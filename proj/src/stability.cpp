#include "gtnn/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gtnn/error.hpp"
#include "gtnn/parallel.hpp"

namespace gtnn {

namespace {

double c_row_max(const PolyMatrix& h) {
  double best = 0.0;
  for (int b = 0; b < h.rows(); ++b) {
    double row = 0.0;
    for (int a = 0; a < h.cols(); ++a) row += expansion_constants(h.at(b, a)).c_total;
    best = std::max(best, row);
  }
  return best;
}

double entry_op_term(const NCPoly& p, std::span<const double> opdist) {
  auto ec = expansion_constants(p);
  double s = 0.0;
  for (std::size_t j = 0; j < opdist.size(); ++j) s += ec.c_per_var[j] * opdist[j];
  return s;
}

double op_row_max(const PolyMatrix& h, std::span<const double> opdist) {
  double best = 0.0;
  for (int b = 0; b < h.rows(); ++b) {
    double row = 0.0;
    for (int a = 0; a < h.cols(); ++a) row += entry_op_term(h.at(b, a), opdist);
    best = std::max(best, row);
  }
  return best;
}

void check_opdist(const PolyMatrix& h, std::span<const double> opdist) {
  if (opdist.size() != static_cast<std::size_t>(h.arity())) throw ShapeError("opdist needs one entry per variable");
  for (double d : opdist)
    if (!(d >= 0.0)) throw PreconditionError("opdist entries must be nonnegative");
}

// Dense h_ba(T) for every layer, row-major within a layer.
using FilterBlocks = std::vector<std::vector<Matrix>>;

// `ops` holds the word operators of the tuple up to at least the network degree.
FilterBlocks filter_blocks(const NetworkSpec& net, const OperatorTuple& t, std::span<const Matrix> ops) {
  FilterBlocks out;
  for (const auto& layer : net.layers()) {
    std::vector<Matrix> blocks;
    for (int b = 0; b < layer.out_features(); ++b)
      for (int a = 0; a < layer.in_features(); ++a) {
        Matrix m = Matrix::Zero(t.dim(), t.dim());
        for (const auto& [w, c] : layer.polys.at(b, a).terms()) m.noalias() += c * ops[basis_index(w, net.arity())];
        blocks.push_back(std::move(m));
      }
    out.push_back(std::move(blocks));
  }
  return out;
}

FilterBlocks filter_blocks(const NetworkSpec& net, const OperatorTuple& t) {
  return filter_blocks(net, t, word_operators(t, net.degree()));
}

std::vector<double> block_norms(const NetworkSpec& net, const FilterBlocks& blocks) {
  std::vector<double> out;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& layer = net.layers()[l];
    out.push_back(exact_block_operator_norm(blocks[l], layer.out_features(), layer.in_features()));
  }
  return out;
}

std::vector<double> diff_norms(const NetworkSpec& net, const FilterBlocks& x, const FilterBlocks& y) {
  FilterBlocks d = x;
  for (std::size_t l = 0; l < d.size(); ++l)
    for (std::size_t i = 0; i < d[l].size(); ++i) d[l][i] -= y[l][i];
  return block_norms(net, d);
}

// Box norm of column s across the features of one layer.
double column_box_norm(const std::vector<Matrix>& feats, Eigen::Index s, double weight) {
  double best = 0.0;
  for (const auto& f : feats) best = std::max(best, std::sqrt(weight * f.col(s).squaredNorm()));
  return best;
}

double column_box_distance(const std::vector<Matrix>& x, const std::vector<Matrix>& y, Eigen::Index s,
                           double weight) {
  double best = 0.0;
  for (std::size_t a = 0; a < x.size(); ++a)
    best = std::max(best, std::sqrt(weight * (x[a].col(s) - y[a].col(s)).squaredNorm()));
  return best;
}

struct OperatorNorms {
  std::vector<double> t;
  std::vector<double> u;
  std::vector<double> diff;
};

std::vector<PerturbationReport> bound_batch(const NetworkSpec& net, const OperatorTuple& t, const OperatorTuple& u,
                                            const std::vector<Matrix>& f, const std::vector<Matrix>& g,
                                            double weight, const std::vector<double>& opdist,
                                            const OperatorNorms& norms) {
  const auto lf = forward_layers(net, t, f);
  const auto lg = forward_layers(net, u, g);
  const int depth = net.depth();
  std::vector<double> c_rows, op_terms;
  bool simplified_ok = true;
  for (const auto& layer : net.layers()) {
    c_rows.push_back(c_row_max(layer.polys));
    op_terms.push_back(op_row_max(layer.polys, opdist));
    simplified_ok = simplified_ok && c_rows.back() <= 1.0;
  }
  const Eigen::Index samples = f.front().cols();
  std::vector<PerturbationReport> out(static_cast<std::size_t>(samples));
  for (Eigen::Index s = 0; s < samples; ++s) {
    auto& r = out[static_cast<std::size_t>(s)];
    r.op_distance = opdist;
    r.input_distance = column_box_distance(f, g, s, weight);
    r.input_min_norm = std::min(column_box_norm(f, s, weight), column_box_norm(g, s, weight));
    double e = r.input_distance;
    double o = r.input_distance;
    for (int l = 0; l < depth; ++l) {
      const auto li = static_cast<std::size_t>(l);
      const double nf = column_box_norm(lf[li], s, weight);
      const double ng = column_box_norm(lg[li], s, weight);
      LayerTerms terms{e * c_rows[li], std::min(nf, ng) * op_terms[li]};
      e = terms.signal_term + terms.operator_term;
      r.layers.push_back(terms);
      o = std::min(norms.t[li] * o + norms.diff[li] * ng, norms.u[li] * o + norms.diff[li] * nf);
    }
    r.constant_bound = e;
    r.operator_bound = o;
    r.bound = std::min(e, o);
    if (simplified_ok) {
      double sum = 0.0;
      for (double v : op_terms) sum += v;
      r.simplified_bound = r.input_distance + r.input_min_norm * sum;
      r.bound = std::min(r.bound, *r.simplified_bound);
    }
    r.empirical = column_box_distance(lf.back(), lg.back(), s, weight);
  }
  return out;
}

void check_tuples(const NetworkSpec& net, const OperatorTuple& t, const OperatorTuple& u) {
  if (t.arity() != net.arity() || u.arity() != net.arity()) throw ShapeError("tuple arity does not match the network");
  if (t.dim() != u.dim()) throw ShapeError("tuples must share a dimension");
  if (!t.nonexpansive_certified() || !u.nonexpansive_certified())
    throw PreconditionError("perturbation bounds need certified nonexpansive tuples");
}

void check_signals(const MultiSignal& f, const MultiSignal& g) {
  if (f.dim() != g.dim() || f.features() != g.features()) throw ShapeError("signals must share a shape");
  if (f.measure_weight() != g.measure_weight()) throw ShapeError("signals must share a measure weight");
}

std::vector<Matrix> as_columns(const MultiSignal& x) {
  std::vector<Matrix> out;
  for (int a = 0; a < x.features(); ++a) out.emplace_back(x.values().col(a));
  return out;
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) {
  return seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(trial) + 1));
}

}  // namespace

double layer_bound(const LayerSpec& h, const MultiSignal& f, const MultiSignal& g, std::span<const double> opdist) {
  check_signals(f, g);
  if (f.features() != h.in_features()) throw ShapeError("signal features do not match the layer");
  check_opdist(h.polys, opdist);
  const double m = std::min(box_norm(f), box_norm(g));
  return box_distance(f, g) * c_row_max(h.polys) + m * op_row_max(h.polys, opdist);
}

double recursion_bound(const NetworkSpec& net, double input_distance, std::span<const double> min_norms,
                       std::span<const double> opdist) {
  if (min_norms.size() != static_cast<std::size_t>(net.depth())) throw ShapeError("need one norm per layer");
  double e = input_distance;
  for (int l = 0; l < net.depth(); ++l) {
    const auto& h = net.layer(l).polys;
    check_opdist(h, opdist);
    e = e * c_row_max(h) + min_norms[static_cast<std::size_t>(l)] * op_row_max(h, opdist);
  }
  return e;
}

PerturbationReport network_bound(const NetworkSpec& net, const OperatorTuple& t, const OperatorTuple& u,
                                 const MultiSignal& f, const MultiSignal& g) {
  check_tuples(net, t, u);
  check_signals(f, g);
  if (f.dim() != t.dim()) throw ShapeError("signal length does not match the tuple dimension");
  if (f.features() != net.layer(0).in_features()) throw ShapeError("signal features do not match the network");
  const auto opdist = exact_op_distance(t, u);
  const auto bt = filter_blocks(net, t);
  const auto bu = filter_blocks(net, u);
  OperatorNorms norms{block_norms(net, bt), block_norms(net, bu), diff_norms(net, bt, bu)};
  return bound_batch(net, t, u, as_columns(f), as_columns(g), f.measure_weight(), opdist, norms).front();
}

double simplified_bound(const NetworkSpec& net, const OperatorTuple& t, const OperatorTuple& u,
                        const MultiSignal& f, const MultiSignal& g) {
  check_tuples(net, t, u);
  check_signals(f, g);
  for (int l = 0; l < net.depth(); ++l)
    if (c_row_max(net.layer(l).polys) > 1.0)
      throw PreconditionError("layer " + std::to_string(l) + " has expansion constant above 1");
  const auto opdist = exact_op_distance(t, u);
  double sum = 0.0;
  for (const auto& layer : net.layers()) sum += op_row_max(layer.polys, opdist);
  return box_distance(f, g) + std::min(box_norm(f), box_norm(g)) * sum;
}

std::vector<FilterMetrics> filter_metrics(const NetworkSpec& net, const OperatorTuple& t, const OperatorTuple& z) {
  if (t.arity() != net.arity() || z.arity() != net.arity() || t.dim() != z.dim())
    throw ShapeError("tuples do not match the network");
  const auto opdist = exact_op_distance(t, z);
  const auto bt = filter_blocks(net, t);
  const auto bz = filter_blocks(net, z);
  const auto nt = block_norms(net, bt);
  const auto nd = diff_norms(net, bt, bz);
  std::vector<FilterMetrics> out;
  for (int l = 0; l < net.depth(); ++l) {
    const auto& h = net.layer(l).polys;
    FilterMetrics m;
    m.filter_op = nt[static_cast<std::size_t>(l)];
    m.c_total = c_row_max(h);
    m.diff_op = nd[static_cast<std::size_t>(l)];
    for (const auto& p : h.entries()) m.diff_entry_bound = std::max(m.diff_entry_bound, entry_op_term(p, opdist));
    m.diff_block_bound = op_row_max(h, opdist);
    out.push_back(m);
  }
  return out;
}

OperatorTuple gaussian_perturbation(const OperatorTuple& t, double size, std::uint64_t seed) {
  if (!(size >= 0.0)) throw PreconditionError("perturbation size must be nonnegative");
  if (size == 0.0) return t;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<SymOperator> ops;
  for (int j = 1; j <= t.arity(); ++j) {
    Matrix e(t.dim(), t.dim());
    for (Eigen::Index c = 0; c < e.cols(); ++c)
      for (Eigen::Index r = 0; r < e.rows(); ++r) e(r, c) = normal(rng);
    SymOperator sym(e);
    const double norm = exact_spectral_norm(sym);
    ops.push_back(normalize_nonexpansive(SymOperator(t.letter(j) + (size / norm) * sym.matrix())));
  }
  return OperatorTuple(std::move(ops));
}

std::vector<SweepRow> perturb_sweep(std::span<const NamedNetwork> nets, const OperatorTuple& t,
                                    std::span<const MultiSignal> inputs, std::span<const double> sizes,
                                    int trials, std::uint64_t seed) {
  if (nets.empty() || inputs.empty() || sizes.empty()) return {};
  if (trials < 1) throw PreconditionError("perturbation sweep needs at least one trial");
  if (!t.nonexpansive_certified()) throw PreconditionError("perturbation sweep needs a certified tuple");
  const double weight = inputs.front().measure_weight();
  std::vector<Matrix> batch;
  for (int a = 0; a < inputs.front().features(); ++a) {
    Matrix m(t.dim(), static_cast<Eigen::Index>(inputs.size()));
    for (std::size_t s = 0; s < inputs.size(); ++s) {
      if (inputs[s].measure_weight() != weight || inputs[s].features() != inputs.front().features())
        throw ShapeError("sweep inputs must share shape and measure weight");
      m.col(static_cast<Eigen::Index>(s)) = inputs[s].values().col(a);
    }
    batch.push_back(std::move(m));
  }

  int max_degree = 0;
  for (const auto& n : nets) {
    if (n.net.arity() != t.arity()) throw ShapeError("network arity does not match the tuple");
    max_degree = std::max(max_degree, n.net.degree());
  }
  std::vector<FilterBlocks> base_blocks;
  std::vector<std::vector<double>> base_norms;
  for (const auto& n : nets) {
    base_blocks.push_back(filter_blocks(n.net, t));
    base_norms.push_back(block_norms(n.net, base_blocks.back()));
  }

  // results[(trial * sizes + size) * nets + net]
  const std::size_t cells = static_cast<std::size_t>(trials) * sizes.size();
  std::vector<SweepRow> results(cells * nets.size());
  parallel_for(cells, [&](std::size_t cell) {
    const std::size_t trial = cell / sizes.size();
    const std::size_t si = cell % sizes.size();
    const OperatorTuple z = gaussian_perturbation(t, sizes[si], trial_seed(seed, trial));
    const auto opdist = exact_op_distance(t, z);
    const auto z_ops = word_operators(z, max_degree);
    double mean_opdist = 0.0;
    for (double d : opdist) mean_opdist += d / static_cast<double>(opdist.size());
    for (std::size_t ni = 0; ni < nets.size(); ++ni) {
      const auto& net = nets[ni].net;
      const auto bz = filter_blocks(net, z, z_ops);
      OperatorNorms norms{base_norms[ni], block_norms(net, bz), diff_norms(net, base_blocks[ni], bz)};
      const auto reports = bound_batch(net, t, z, batch, batch, weight, opdist, norms);
      SweepRow row{nets[ni].name, sizes[si], mean_opdist, 0.0, 0.0, 0.0, 0.0, 0.0};
      for (const auto& r : reports) {
        row.empirical += r.empirical / static_cast<double>(reports.size());
        row.bound += r.bound / static_cast<double>(reports.size());
      }
      for (std::size_t l = 0; l < norms.diff.size(); ++l) {
        const auto& h = net.layer(static_cast<int>(l)).polys;
        row.filter_diff_op = std::max(row.filter_diff_op, norms.diff[l]);
        for (const auto& p : h.entries())
          row.filter_diff_entry_bound = std::max(row.filter_diff_entry_bound, entry_op_term(p, opdist));
        row.filter_diff_block_bound = std::max(row.filter_diff_block_bound, op_row_max(h, opdist));
      }
      results[cell * nets.size() + ni] = std::move(row);
    }
  });

  std::vector<SweepRow> out;
  const double inv = 1.0 / static_cast<double>(trials);
  for (std::size_t ni = 0; ni < nets.size(); ++ni)
    for (std::size_t si = 0; si < sizes.size(); ++si) {
      SweepRow acc{nets[ni].name, sizes[si], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
      for (int tr = 0; tr < trials; ++tr) {
        const auto& r = results[(static_cast<std::size_t>(tr) * sizes.size() + si) * nets.size() + ni];
        acc.mean_opdist += inv * r.mean_opdist;
        acc.empirical += inv * r.empirical;
        acc.bound += inv * r.bound;
        acc.filter_diff_op += inv * r.filter_diff_op;
        acc.filter_diff_entry_bound += inv * r.filter_diff_entry_bound;
        acc.filter_diff_block_bound += inv * r.filter_diff_block_bound;
      }
      out.push_back(std::move(acc));
    }
  return out;
}

}  // namespace gtnn
