#include "gtnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include "gtnn/error.hpp"
#include "gtnn/hash.hpp"

namespace gtnn {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

// ---------------------------------------------------------------------------
// NetworkSpec

NetworkSpec::NetworkSpec(int arity, int degree, std::vector<LayerSpec> layers)
    : NetworkSpec(arity, degree, std::move(layers), {}) {}

NetworkSpec::NetworkSpec(int arity, int degree, std::vector<LayerSpec> layers, std::vector<Word> support)
    : arity_(arity), degree_(degree), layers_(std::move(layers)), support_(std::move(support)) {
  if (arity < 1) throw PreconditionError("network arity must be >= 1");
  if (degree < 0) throw PreconditionError("network degree must be >= 0");
  if (layers_.empty()) throw ShapeError("network needs at least one layer");
  auto basis = enumerate_basis(arity, degree);
  if (support_.empty()) {
    support_ = basis;
  } else {
    std::sort(support_.begin(), support_.end());
    if (std::adjacent_find(support_.begin(), support_.end()) != support_.end())
      throw ShapeError("network support lists a word twice");
    for (const auto& w : support_) {
      if (static_cast<int>(w.length()) > degree) throw ShapeError("support word " + w.to_string() + " exceeds the degree cap");
      for (int l : w.letters())
        if (l < 1 || l > arity) throw ShapeError("support word " + w.to_string() + " exceeds the arity");
    }
  }
  full_support_ = support_ == basis;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& polys = layers_[i].polys;
    if (polys.arity() != arity) throw ShapeError("layer " + std::to_string(i) + " arity does not match the network");
    if (i > 0 && polys.cols() != layers_[i - 1].polys.rows())
      throw ShapeError("layer " + std::to_string(i) + " input width does not match the previous layer");
    for (const auto& p : polys.entries())
      for (const auto& [w, c] : p.terms())
        if (!std::binary_search(support_.begin(), support_.end(), w))
          throw ShapeError("layer " + std::to_string(i) + " uses word " + w.to_string() + " outside the support");
  }
}

std::vector<int> NetworkSpec::feature_sizes() const {
  std::vector<int> out{layers_.front().in_features()};
  for (const auto& l : layers_) out.push_back(l.out_features());
  return out;
}

std::size_t NetworkSpec::parameter_count() const noexcept {
  std::size_t blocks = 0;
  for (const auto& l : layers_)
    blocks += static_cast<std::size_t>(l.out_features()) * static_cast<std::size_t>(l.in_features());
  return blocks * support_.size();
}

std::vector<double> NetworkSpec::coefficients() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_)
    for (int b = 0; b < l.out_features(); ++b)
      for (int a = 0; a < l.in_features(); ++a) {
        const auto& p = l.polys.at(b, a);
        for (const auto& w : support_) out.push_back(p.coefficient(w));
      }
  return out;
}

NetworkSpec NetworkSpec::with_coefficients(std::span<const double> coeffs) const {
  if (coeffs.size() != parameter_count()) throw ShapeError("coefficient vector has the wrong length");
  std::vector<LayerSpec> layers;
  std::size_t pos = 0;
  for (const auto& l : layers_) {
    PolyMatrix polys(l.out_features(), l.in_features(), arity_);
    for (int b = 0; b < l.out_features(); ++b)
      for (int a = 0; a < l.in_features(); ++a) {
        NCPoly::Terms terms;
        for (const auto& w : support_) {
          double c = coeffs[pos++];
          if (c != 0.0) terms.emplace(w, c);
        }
        polys.set(b, a, NCPoly(arity_, std::move(terms)));
      }
    layers.push_back({std::move(polys), l.activation});
  }
  return NetworkSpec(arity_, degree_, std::move(layers), support_);
}

NetworkSpec NetworkSpec::truncated(int layers) const {
  if (layers < 1 || layers > depth()) throw PreconditionError("truncation depth out of range");
  return NetworkSpec(arity_, degree_, std::vector<LayerSpec>(layers_.begin(), layers_.begin() + layers), support_);
}

namespace {

// Uniform on [0, 1) from the top 53 bits; identical on every platform.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t fingerprint(const NetworkSpec& net) {
  auto coeffs = net.coefficients();
  auto h = fnv1a(std::span(reinterpret_cast<const unsigned char*>(coeffs.data()), coeffs.size() * sizeof(double)));
  for (int s : net.feature_sizes()) h = fnv1a(std::to_string(s) + ",", h);
  return h;
}

}  // namespace

NetworkSpec init_network(const NetworkShape& shape, double init_scale, std::uint64_t seed) {
  const auto& sizes = shape.feature_sizes;
  if (sizes.size() < 2) throw ShapeError("network shape needs at least two feature sizes");
  for (int s : sizes)
    if (s < 1) throw ShapeError("feature sizes must be positive");
  const std::size_t depth = sizes.size() - 1;
  std::vector<Activation> acts = shape.activations;
  if (acts.empty()) {
    acts.assign(depth, Activation::relu);
    acts.back() = Activation::identity;
  }
  if (acts.size() != depth) throw ShapeError("need one activation per layer");
  // Build a zero network first to validate the support and fix the layout.
  std::vector<LayerSpec> zero_layers;
  for (std::size_t i = 0; i < depth; ++i)
    zero_layers.push_back({PolyMatrix(sizes[i + 1], sizes[i], shape.arity), acts[i]});
  NetworkSpec zero(shape.arity, shape.degree, std::move(zero_layers), shape.support);

  std::mt19937_64 rng(seed);
  const double words = static_cast<double>(zero.support().size());
  std::vector<double> coeffs;
  coeffs.reserve(zero.parameter_count());
  for (std::size_t i = 0; i < depth; ++i) {
    const double s = init_scale / (words * sizes[i]);
    const std::size_t count = static_cast<std::size_t>(sizes[i + 1]) * static_cast<std::size_t>(sizes[i]) *
                              zero.support().size();
    for (std::size_t c = 0; c < count; ++c) coeffs.push_back(s * (2.0 * unit_uniform(rng) - 1.0));
  }
  return zero.with_coefficients(coeffs);
}

// ---------------------------------------------------------------------------
// Reference forward / backward

namespace {

Matrix activate(const Matrix& z, Activation a) {
  return a == Activation::relu ? Matrix(z.cwiseMax(0.0)) : z;
}

Matrix activation_mask(const Matrix& z, Activation a) {
  if (a == Activation::identity) return Matrix::Ones(z.rows(), z.cols());
  return (z.array() > 0.0).cast<double>().matrix();
}

void check_input(const NetworkSpec& net, const OperatorTuple& t, const MultiSignal& x) {
  if (t.arity() != net.arity()) throw ShapeError("tuple arity does not match the network");
  if (x.features() != net.layer(0).in_features()) throw ShapeError("input features do not match the network");
  if (x.dim() != t.dim()) throw ShapeError("input length does not match the tuple dimension");
}

NCPoly reversed_poly(const NCPoly& p) {
  NCPoly::Terms out;
  for (const auto& [w, c] : p.terms()) out.emplace(w.reversed(), c);
  return NCPoly(p.arity(), std::move(out));
}

}  // namespace

ForwardResult forward(const NetworkSpec& net, const OperatorTuple& t, const MultiSignal& x) {
  check_input(net, t, x);
  ForwardCache cache;
  cache.fingerprint = fingerprint(net);
  MultiSignal cur = x;
  for (const auto& layer : net.layers()) {
    cache.inputs.push_back(cur);
    MultiSignal z = eval_filter(layer.polys, t, cur);
    cache.pre_activations.push_back(z);
    cur = MultiSignal(activate(z.values(), layer.activation), z.measure_weight());
  }
  return {std::move(cur), std::move(cache)};
}

MultiSignal predict(const NetworkSpec& net, const OperatorTuple& t, const MultiSignal& x) {
  check_input(net, t, x);
  MultiSignal cur = x;
  for (const auto& layer : net.layers()) {
    MultiSignal z = eval_filter(layer.polys, t, cur);
    cur = MultiSignal(activate(z.values(), layer.activation), z.measure_weight());
  }
  return cur;
}

std::vector<std::vector<Matrix>> forward_layers(const NetworkSpec& net, const OperatorTuple& t,
                                                const std::vector<Matrix>& inputs) {
  if (t.arity() != net.arity()) throw ShapeError("tuple arity does not match the network");
  if (static_cast<int>(inputs.size()) != net.layer(0).in_features()) throw ShapeError("input features do not match the network");
  for (const auto& x : inputs)
    if (x.rows() != t.dim() || x.cols() != inputs.front().cols()) throw ShapeError("batched input shape mismatch");
  std::vector<std::vector<Matrix>> out{inputs};
  const int k = net.arity();
  for (const auto& layer : net.layers()) {
    const auto& x = out.back();
    std::vector<Matrix> z(static_cast<std::size_t>(layer.out_features()), Matrix::Zero(t.dim(), inputs.front().cols()));
    for (int a = 0; a < layer.in_features(); ++a) {
      auto feats = word_features(t, net.degree(), x[static_cast<std::size_t>(a)]);
      for (int b = 0; b < layer.out_features(); ++b)
        for (const auto& [w, c] : layer.polys.at(b, a).terms()) z[static_cast<std::size_t>(b)].noalias() += c * feats[basis_index(w, k)];
    }
    for (auto& zb : z) zb = activate(zb, layer.activation);
    out.push_back(std::move(z));
  }
  return out;
}

std::vector<double> backward(const NetworkSpec& net, const OperatorTuple& t, const ForwardCache& cache,
                             const MultiSignal& dloss_dy) {
  if (cache.fingerprint != fingerprint(net) || cache.inputs.size() != static_cast<std::size_t>(net.depth()))
    throw PreconditionError("forward cache does not belong to this network");
  const auto& last = cache.pre_activations.back();
  if (dloss_dy.dim() != last.dim() || dloss_dy.features() != last.features())
    throw ShapeError("loss gradient shape does not match the network output");

  std::vector<std::size_t> offsets{0};
  for (const auto& l : net.layers())
    offsets.push_back(offsets.back() + static_cast<std::size_t>(l.out_features() * l.in_features()) * net.support().size());
  std::vector<double> grad(offsets.back(), 0.0);

  Matrix g = dloss_dy.values();
  for (int li = net.depth() - 1; li >= 0; --li) {
    const auto& layer = net.layer(li);
    const Matrix gpre = g.cwiseProduct(activation_mask(cache.pre_activations[li].values(), layer.activation));
    const Matrix& x = cache.inputs[li].values();
    std::size_t pos = offsets[li];
    for (int b = 0; b < layer.out_features(); ++b)
      for (int a = 0; a < layer.in_features(); ++a)
        for (const auto& w : net.support()) grad[pos++] = gpre.col(b).dot(eval_word(w, t, x.col(a)));
    if (li > 0) {
      Matrix gin = Matrix::Zero(x.rows(), x.cols());
      for (int b = 0; b < layer.out_features(); ++b)
        for (int a = 0; a < layer.in_features(); ++a) {
          const NCPoly& p = layer.polys.at(b, a);
          if (!p.is_zero()) gin.col(a) += eval_poly(reversed_poly(p), t, gpre.col(b));
        }
      g = std::move(gin);
    }
  }
  return grad;
}

LossResult mse_loss(const MultiSignal& y_hat, const MultiSignal& y, const Matrix* mask) {
  if (y_hat.dim() != y.dim() || y_hat.features() != y.features()) throw ShapeError("mse needs equal shapes");
  Matrix diff = y_hat.values() - y.values();
  double count = static_cast<double>(diff.size());
  if (mask) {
    if (mask->rows() != diff.rows() || mask->cols() != diff.cols()) throw ShapeError("mask shape mismatch");
    Matrix keep = (mask->array() != 0.0).cast<double>().matrix();
    count = keep.sum();
    diff = diff.cwiseProduct(keep);
  }
  if (count == 0.0) throw PreconditionError("mse over an empty mask");
  return {diff.squaredNorm() / count, (2.0 / count) * diff};
}

double r_squared(std::span<const Matrix> y_hat, std::span<const Matrix> y) {
  if (y_hat.size() != y.size() || y.empty()) throw ShapeError("r_squared needs matching nonempty sets");
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y_hat[i].rows() != y[i].rows() || y_hat[i].cols() != y[i].cols()) throw ShapeError("r_squared shape mismatch");
    total += y[i].sum();
    count += static_cast<double>(y[i].size());
  }
  const double mean = total / count;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y_hat[i] - y[i]).squaredNorm();
    ss_tot += (y[i].array() - mean).square().sum();
  }
  if (ss_tot == 0.0) throw PreconditionError("r_squared of a constant target");
  return 1.0 - ss_res / ss_tot;
}

double r_squared(const MultiSignal& y_hat, const MultiSignal& y) {
  const Matrix* a = &y_hat.values();
  const Matrix* b = &y.values();
  return r_squared(std::span(a, 1), std::span(b, 1));
}

// ---------------------------------------------------------------------------
// Expansion constants and the penalty, on the flat coefficient layout

namespace {

struct Layout {
  int arity;
  std::vector<int> sizes;
  std::vector<Word> support;
  std::vector<std::vector<int>> counts;  // counts[w][j] = occurrences of j+1
  std::vector<std::size_t> offsets;

  explicit Layout(const NetworkSpec& net) : arity(net.arity()), sizes(net.feature_sizes()), support(net.support()) {
    for (const auto& w : support) {
      std::vector<int> c(static_cast<std::size_t>(arity));
      for (int j = 1; j <= arity; ++j) c[static_cast<std::size_t>(j - 1)] = w.count(j);
      counts.push_back(std::move(c));
    }
    offsets.push_back(0);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
      offsets.push_back(offsets.back() + static_cast<std::size_t>(sizes[l + 1] * sizes[l]) * support.size());
  }
  int depth() const { return static_cast<int>(sizes.size()) - 1; }
  std::size_t index(int layer, int b, int a, std::size_t w) const {
    return offsets[static_cast<std::size_t>(layer)] +
           (static_cast<std::size_t>(b) * static_cast<std::size_t>(sizes[static_cast<std::size_t>(layer)]) +
            static_cast<std::size_t>(a)) * support.size() + w;
  }
};

// Row sums of C (var = -1) or C_j (var = j - 1) for one layer.
std::vector<double> row_constants(const Layout& lay, std::span<const double> c, int layer, int var) {
  const int rows = lay.sizes[static_cast<std::size_t>(layer) + 1];
  const int cols = lay.sizes[static_cast<std::size_t>(layer)];
  std::vector<double> out(static_cast<std::size_t>(rows), 0.0);
  for (int b = 0; b < rows; ++b)
    for (int a = 0; a < cols; ++a)
      for (std::size_t w = 0; w < lay.support.size(); ++w) {
        double weight = var < 0 ? 1.0 : lay.counts[w][static_cast<std::size_t>(var)];
        out[static_cast<std::size_t>(b)] += weight * std::abs(c[lay.index(layer, b, a, w)]);
      }
  return out;
}

ExpansionVectors expansion_vectors_flat(const Layout& lay, std::span<const double> c) {
  ExpansionVectors ev;
  ev.c_per_var.assign(static_cast<std::size_t>(lay.arity), {});
  for (int l = 0; l < lay.depth(); ++l) {
    auto rows = row_constants(lay, c, l, -1);
    ev.c_total.push_back(*std::max_element(rows.begin(), rows.end()));
    for (int j = 0; j < lay.arity; ++j) {
      auto rj = row_constants(lay, c, l, j);
      ev.c_per_var[static_cast<std::size_t>(j)].push_back(*std::max_element(rj.begin(), rj.end()));
    }
  }
  return ev;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void check_targets(const Layout& lay, const TrainConfig& cfg) {
  const auto n = static_cast<std::size_t>(lay.depth());
  if (cfg.lambda < 0.0) throw ConfigError("lambda must be nonnegative");
  if (cfg.lambda == 0.0) return;
  if (!cfg.c_total_targets && !cfg.c_per_var_targets) throw ConfigError("lambda > 0 needs expansion-constant targets");
  if (cfg.c_total_targets && cfg.c_total_targets->size() != n) throw ConfigError("c_total_targets needs one entry per layer");
  if (cfg.c_per_var_targets) {
    if (cfg.c_per_var_targets->size() != static_cast<std::size_t>(lay.arity))
      throw ConfigError("c_per_var_targets needs one vector per variable");
    for (const auto& v : *cfg.c_per_var_targets)
      if (v.size() != n) throw ConfigError("c_per_var_targets needs one entry per layer");
  }
}

PenaltyResult penalty_flat(const Layout& lay, std::span<const double> c, const TrainConfig& cfg) {
  check_targets(lay, cfg);
  PenaltyResult out;
  out.subgradient.assign(c.size(), 0.0);
  if (cfg.lambda == 0.0) return out;
  auto apply = [&](int layer, int var, double target) {
    auto rows = row_constants(lay, c, layer, var);
    auto it = std::max_element(rows.begin(), rows.end());  // first maximizer
    double excess = *it - target;
    if (excess <= 0.0) return;
    out.value += cfg.lambda * excess;
    const int b = static_cast<int>(it - rows.begin());
    const int cols = lay.sizes[static_cast<std::size_t>(layer)];
    for (int a = 0; a < cols; ++a)
      for (std::size_t w = 0; w < lay.support.size(); ++w) {
        double weight = var < 0 ? 1.0 : lay.counts[w][static_cast<std::size_t>(var)];
        std::size_t i = lay.index(layer, b, a, w);
        out.subgradient[i] += cfg.lambda * weight * sign(c[i]);
      }
  };
  for (int l = 0; l < lay.depth(); ++l) {
    if (cfg.c_total_targets) apply(l, -1, (*cfg.c_total_targets)[static_cast<std::size_t>(l)]);
    if (cfg.c_per_var_targets)
      for (int j = 0; j < lay.arity; ++j)
        apply(l, j, (*cfg.c_per_var_targets)[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)]);
  }
  return out;
}

}  // namespace

ExpansionVectors expansion_vectors(const NetworkSpec& net) {
  Layout lay(net);
  auto c = net.coefficients();
  return expansion_vectors_flat(lay, c);
}

PenaltyResult penalty(const NetworkSpec& net, const TrainConfig& config) {
  Layout lay(net);
  auto c = net.coefficients();
  return penalty_flat(lay, c, config);
}

Objective reference_objective(const NetworkSpec& net, const OperatorTuple& t, const SampleSet& samples) {
  if (samples.empty()) throw PreconditionError("objective over an empty sample set");
  double count = 0.0;
  for (const auto& s : samples)
    count += s.mask ? (s.mask->array() != 0.0).cast<double>().sum() : static_cast<double>(s.target.values().size());
  if (count == 0.0) throw PreconditionError("objective over an empty mask");
  Objective out;
  out.gradient.assign(net.parameter_count(), 0.0);
  for (const auto& s : samples) {
    auto fr = forward(net, t, s.input);
    Matrix diff = fr.output.values() - s.target.values();
    if (s.mask) diff = diff.cwiseProduct((s.mask->array() != 0.0).cast<double>().matrix());
    out.loss += diff.squaredNorm() / count;
    auto g = backward(net, t, fr.cache, MultiSignal((2.0 / count) * diff, fr.output.measure_weight()));
    for (std::size_t i = 0; i < g.size(); ++i) out.gradient[i] += g[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batched objective

struct BatchObjective::Impl {
  Layout lay;
  std::vector<Activation> acts;
  OperatorTuple tuple;
  int n = 0;
  int samples = 0;
  // Words needed to build the support by prepending letters, canonical order.
  std::vector<Word> closure;
  std::vector<std::size_t> tail_index;     // into closure; unused for the empty word
  std::vector<std::size_t> support_index;  // support word -> closure position
  std::vector<Matrix> inputs;              // per input feature, n x S
  std::vector<Matrix> targets;             // per output feature, n x S
  std::vector<Matrix> keep;                // masks, empty when all entries count
  double count = 0.0;
  std::vector<std::vector<Matrix>> features0;  // [a][closure word], n x S
  std::vector<Matrix> word_ops;                // closure word operators, depth > 1 only

  Impl(const NetworkSpec& net, const OperatorTuple& t, const SampleSet& set)
      : lay(net), tuple(t) {
    if (t.arity() != net.arity()) throw ShapeError("tuple arity does not match the network");
    if (set.empty()) throw PreconditionError("objective over an empty sample set");
    for (const auto& l : net.layers()) acts.push_back(l.activation);
    n = t.dim();
    samples = static_cast<int>(set.size());
    const int a0 = lay.sizes.front();
    const int an = lay.sizes.back();

    std::set<Word> needed;
    for (const auto& w : lay.support) {
      Word cur = w;
      while (true) {
        needed.insert(cur);
        if (cur.empty()) break;
        cur = cur.tail();
      }
    }
    closure.assign(needed.begin(), needed.end());
    auto pos = [&](const Word& w) {
      return static_cast<std::size_t>(std::lower_bound(closure.begin(), closure.end(), w) - closure.begin());
    };
    tail_index.assign(closure.size(), 0);
    for (std::size_t i = 0; i < closure.size(); ++i)
      if (!closure[i].empty()) tail_index[i] = pos(closure[i].tail());
    for (const auto& w : lay.support) support_index.push_back(pos(w));

    inputs.assign(static_cast<std::size_t>(a0), Matrix(n, samples));
    targets.assign(static_cast<std::size_t>(an), Matrix(n, samples));
    bool any_mask = false;
    for (const auto& s : set) any_mask = any_mask || s.mask.has_value();
    if (any_mask) keep.assign(static_cast<std::size_t>(an), Matrix::Ones(n, samples));
    for (int s = 0; s < samples; ++s) {
      const auto& smp = set[static_cast<std::size_t>(s)];
      if (smp.input.dim() != n || smp.input.features() != a0) throw ShapeError("sample input shape mismatch");
      if (smp.target.dim() != n || smp.target.features() != an) throw ShapeError("sample target shape mismatch");
      for (int a = 0; a < a0; ++a) inputs[a].col(s) = smp.input.values().col(a);
      for (int b = 0; b < an; ++b) targets[b].col(s) = smp.target.values().col(b);
      if (smp.mask) {
        if (smp.mask->rows() != n || smp.mask->cols() != an) throw ShapeError("sample mask shape mismatch");
        for (int b = 0; b < an; ++b) keep[b].col(s) = (smp.mask->col(b).array() != 0.0).cast<double>().matrix();
      }
    }
    if (any_mask) {
      for (const auto& k : keep) count += k.sum();
    } else {
      count = static_cast<double>(n) * samples * an;
    }
    if (count == 0.0) throw PreconditionError("objective over an empty mask");

    features0.resize(static_cast<std::size_t>(a0));
    for (int a = 0; a < a0; ++a) features0[a] = build(inputs[a]);
    if (lay.depth() > 1) word_ops = build(Matrix::Identity(n, n));
  }

  std::vector<Matrix> build(const Matrix& seed) const {
    std::vector<Matrix> out;
    out.reserve(closure.size());
    for (std::size_t i = 0; i < closure.size(); ++i) {
      if (closure[i].empty())
        out.push_back(seed);
      else
        out.push_back(tuple.letter(closure[i][0]) * out[tail_index[i]]);
    }
    return out;
  }

  struct Pass {
    std::vector<std::vector<Matrix>> pre;   // per layer, per output feature
    std::vector<std::vector<Matrix>> post;  // per layer, per output feature
    std::vector<std::vector<Matrix>> blocks;  // per layer >= 1, b * A + a
  };

  Pass run_forward(std::span<const double> c) const {
    if (c.size() != lay.offsets.back()) throw ShapeError("coefficient vector has the wrong length");
    Pass p;
    const std::size_t nw = lay.support.size();
    for (int l = 0; l < lay.depth(); ++l) {
      const int rows = lay.sizes[static_cast<std::size_t>(l) + 1];
      const int cols = lay.sizes[static_cast<std::size_t>(l)];
      std::vector<Matrix> z(static_cast<std::size_t>(rows), Matrix::Zero(n, samples));
      std::vector<Matrix> blocks;
      for (int b = 0; b < rows; ++b)
        for (int a = 0; a < cols; ++a) {
          if (l == 0) {
            for (std::size_t w = 0; w < nw; ++w) {
              double coef = c[lay.index(l, b, a, w)];
              if (coef != 0.0) z[b].noalias() += coef * features0[a][support_index[w]];
            }
          } else {
            Matrix m = Matrix::Zero(n, n);
            for (std::size_t w = 0; w < nw; ++w) {
              double coef = c[lay.index(l, b, a, w)];
              if (coef != 0.0) m.noalias() += coef * word_ops[support_index[w]];
            }
            z[b].noalias() += m * p.post.back()[a];
            blocks.push_back(std::move(m));
          }
        }
      std::vector<Matrix> y;
      for (const auto& zb : z) y.push_back(activate(zb, acts[l]));
      p.pre.push_back(std::move(z));
      p.post.push_back(std::move(y));
      p.blocks.push_back(std::move(blocks));
    }
    return p;
  }

  double loss_of(const Pass& p, std::vector<Matrix>* grads) const {
    const auto& out = p.post.back();
    double loss = 0.0;
    for (std::size_t b = 0; b < out.size(); ++b) {
      Matrix diff = out[b] - targets[b];
      if (!keep.empty()) diff = diff.cwiseProduct(keep[b]);
      loss += diff.squaredNorm();
      if (grads) grads->push_back((2.0 / count) * diff);
    }
    return loss / count;
  }

  double evaluate(std::span<const double> c, std::vector<double>* grad) const {
    Pass p = run_forward(c);
    std::vector<Matrix> g;
    const double loss = loss_of(p, grad ? &g : nullptr);
    if (!grad) return loss;

    grad->assign(c.size(), 0.0);
    const std::size_t nw = lay.support.size();
    for (int l = lay.depth() - 1; l >= 0; --l) {
      const int rows = lay.sizes[static_cast<std::size_t>(l) + 1];
      const int cols = lay.sizes[static_cast<std::size_t>(l)];
      for (int b = 0; b < rows; ++b)
        if (acts[l] == Activation::relu) g[b] = g[b].cwiseProduct(activation_mask(p.pre[l][b], acts[l]));
      if (l == 0) {
        for (int b = 0; b < rows; ++b)
          for (int a = 0; a < cols; ++a)
            for (std::size_t w = 0; w < nw; ++w)
              (*grad)[lay.index(l, b, a, w)] = g[b].cwiseProduct(features0[a][support_index[w]]).sum();
        break;
      }
      const auto& x = p.post[static_cast<std::size_t>(l) - 1];
      std::vector<Matrix> gin(static_cast<std::size_t>(cols), Matrix::Zero(n, samples));
      for (int b = 0; b < rows; ++b)
        for (int a = 0; a < cols; ++a) {
          Matrix outer = g[b] * x[a].transpose();
          for (std::size_t w = 0; w < nw; ++w)
            (*grad)[lay.index(l, b, a, w)] = word_ops[support_index[w]].cwiseProduct(outer).sum();
          gin[a].noalias() += p.blocks[l][static_cast<std::size_t>(b * cols + a)].transpose() * g[b];
        }
      g = std::move(gin);
    }
    return loss;
  }
};

BatchObjective::BatchObjective(const NetworkSpec& shape, const OperatorTuple& t, const SampleSet& samples)
    : impl_(std::make_unique<Impl>(shape, t, samples)) {}
BatchObjective::~BatchObjective() = default;
BatchObjective::BatchObjective(BatchObjective&&) noexcept = default;
BatchObjective& BatchObjective::operator=(BatchObjective&&) noexcept = default;

double BatchObjective::evaluate(std::span<const double> coeffs, std::vector<double>* gradient) const {
  return impl_->evaluate(coeffs, gradient);
}

std::vector<Matrix> BatchObjective::predictions(std::span<const double> coeffs) const {
  auto pass = impl_->run_forward(coeffs);
  const auto& out = pass.post.back();
  std::vector<Matrix> res;
  for (int s = 0; s < impl_->samples; ++s) {
    Matrix y(impl_->n, static_cast<Eigen::Index>(out.size()));
    for (std::size_t b = 0; b < out.size(); ++b) y.col(static_cast<Eigen::Index>(b)) = out[b].col(s);
    res.push_back(std::move(y));
  }
  return res;
}

double BatchObjective::r_squared(std::span<const double> coeffs) const {
  auto pass = impl_->run_forward(coeffs);
  const auto& out = pass.post.back();
  return gtnn::r_squared(std::span<const Matrix>(out), std::span<const Matrix>(impl_->targets));
}

std::pair<double, std::optional<double>> BatchObjective::loss_and_r_squared(std::span<const double> coeffs) const {
  auto pass = impl_->run_forward(coeffs);
  const double loss = impl_->loss_of(pass, nullptr);
  try {
    return {loss, gtnn::r_squared(std::span<const Matrix>(pass.post.back()), std::span<const Matrix>(impl_->targets))};
  } catch (const PreconditionError&) {
    return {loss, std::nullopt};
  }
}

// ---------------------------------------------------------------------------
// Training

void adam_update(std::vector<double>& params, std::span<const double> grad, AdamState& state,
                 const TrainConfig& cfg) {
  if (grad.size() != params.size()) throw ShapeError("gradient length does not match parameters");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
  }
}

TrainResult train(const NetworkSpec& net, const OperatorTuple& t, const SampleSet& train_set,
                  const TrainConfig& config, const TrainOptions& options) {
  if (config.epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (config.ridge < 0.0) throw ConfigError("ridge must be nonnegative");
  Layout lay(net);
  check_targets(lay, config);
  BatchObjective objective(net, t, train_set);
  std::optional<BatchObjective> test;
  if (options.test_samples) test.emplace(net, options.test_tuple ? *options.test_tuple : t, *options.test_samples);

  std::vector<double> params = net.coefficients();
  std::vector<double> grad;
  AdamState state;
  TrainHistory history;
  history.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = objective.evaluate(params, &grad);
    auto pen = penalty_flat(lay, params, config);
    rec.penalty = pen.value;
    double ridge = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      grad[i] += pen.subgradient[i];
      if (config.ridge > 0.0) {
        ridge += config.ridge * params[i] * params[i];
        grad[i] += 2.0 * config.ridge * params[i];
      }
    }
    if (!std::isfinite(rec.train_loss + rec.penalty + ridge)) throw NonFiniteLossError(epoch);
    rec.constants = expansion_vectors_flat(lay, params);
    if (test) {
      std::tie(rec.test_mse, rec.test_r2) = test->loss_and_r_squared(params);
    }
    history.push_back(std::move(rec));
    adam_update(params, grad, state, config);
    if (options.monitor && options.monitor_every > 0 && epoch % options.monitor_every == 0)
      options.monitor(epoch, net.with_coefficients(params));
  }
  return {net.with_coefficients(params), std::move(history)};
}

}  // namespace gtnn
