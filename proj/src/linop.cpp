#include "gtnn/linop.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <utility>

#include <Eigen/Eigenvalues>

#include "gtnn/error.hpp"

namespace gtnn {

SymOperator::SymOperator(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) throw ShapeError("operator must be a nonempty square matrix");
  m_ = 0.5 * (m + m.transpose());
}

namespace {

Vector start_vector(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v / v.norm();
}

template <typename Step>
double power_iterate(Eigen::Index n, const PowerIterationOptions& opts, Step step) {
  if (!(opts.tol > 0.0)) throw PreconditionError("power iteration tolerance must be positive");
  Vector v = start_vector(n, opts.seed);
  double est = 0.0;
  for (int it = 0; it < opts.max_iter; ++it) {
    auto [next, exact] = step(v);
    if (next == 0.0 || exact) return next;
    double delta = std::abs(next - est);
    est = next;
    if (it > 0 && delta <= opts.tol * est) return est;
  }
  throw ConvergenceError("power iteration did not converge", est);
}

}  // namespace

double operator_norm(const Matrix& m, const PowerIterationOptions& opts) {
  if (m.size() == 0 || m.isZero(0.0)) return 0.0;
  return power_iterate(m.cols(), opts, [&](Vector& v) {
    Vector w = m * v;
    double est = w.norm();
    Vector u = m.transpose() * w;
    double un = u.norm();
    if (un > 0.0) v = u / un;
    return std::pair{est, false};
  });
}

// Each step also takes the largest |Ritz value| of M on span{v, Mv}, which
// resolves a dominant pair of eigenvalues with opposite signs.
double spectral_norm(const SymOperator& op, const PowerIterationOptions& opts) {
  const Matrix& m = op.matrix();
  if (m.isZero(0.0)) return 0.0;
  return power_iterate(m.cols(), opts, [&](Vector& v) {
    Vector w = m * v;
    const double wn = w.norm();
    const double alpha = v.dot(w);
    Vector r = w - alpha * v;
    const double beta = r.norm();
    double est = wn;
    bool exact = false;
    if (beta <= 1e-14 * wn) {
      est = std::max(est, std::abs(alpha));
      exact = true;
    } else {
      Vector u = r / beta;
      const double gamma = u.dot(m * u);
      const double mid = 0.5 * (alpha + gamma);
      const double rad = std::hypot(0.5 * (alpha - gamma), beta);
      est = std::max({est, std::abs(mid + rad), std::abs(mid - rad)});
    }
    if (wn > 0.0) v = w / wn;
    return std::pair{est, exact};
  });
}

double exact_spectral_norm(const SymOperator& op) {
  if (op.matrix().isZero(0.0)) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(op.matrix(), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("eigensolver failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double exact_operator_norm(const Matrix& m) {
  if (m.size() == 0 || m.isZero(0.0)) return 0.0;
  // Largest eigenvalue of the smaller Gram matrix, after scaling to avoid
  // overflow in the product.
  const double scale = m.cwiseAbs().maxCoeff();
  const Matrix a = m / scale;
  const Matrix gram = a.rows() <= a.cols() ? Matrix(a * a.transpose()) : Matrix(a.transpose() * a);
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("eigensolver failed");
  return scale * std::sqrt(std::max(es.eigenvalues().maxCoeff(), 0.0));
}

double max_row_sum(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

SymOperator normalize_nonexpansive(const SymOperator& op) {
  if (max_row_sum(op.matrix()) <= 1.0) return op;
  double norm = exact_spectral_norm(op);
  if (norm <= 1.0) return op;
  return SymOperator(op.matrix() / norm);
}

OperatorTuple::OperatorTuple(std::vector<SymOperator> ops) {
  if (ops.empty()) throw ShapeError("operator tuple needs at least one operator");
  const int n = ops.front().dim();
  for (const auto& op : ops)
    if (op.dim() != n) throw ShapeError("operators in a tuple must share a dimension");
  bool certified = true;
  for (const auto& op : ops) {
    if (max_row_sum(op.matrix()) <= 1.0 + kNonexpansiveSlack) continue;
    try {
      if (spectral_norm(op) > 1.0 + kNonexpansiveSlack) certified = false;
    } catch (const ConvergenceError&) {
      certified = false;
    }
  }
  auto data = std::make_shared<Data>();
  data->ops = std::move(ops);
  data->certified = certified;
  data_ = std::move(data);
}

OperatorTuple normalize_tuple(const OperatorTuple& t) {
  std::vector<SymOperator> ops;
  ops.reserve(static_cast<std::size_t>(t.arity()));
  for (const auto& op : t.operators()) ops.push_back(normalize_nonexpansive(op));
  return OperatorTuple(std::move(ops));
}

MultiSignal::MultiSignal(Matrix values, double measure_weight)
    : values_(std::move(values)), weight_(measure_weight) {
  if (!(measure_weight > 0.0) || !std::isfinite(measure_weight))
    throw PreconditionError("measure weight must be positive and finite");
}

double MultiSignal::feature_norm(int a) const {
  return std::sqrt(weight_ * values_.col(a).squaredNorm());
}

namespace {

void check_word_fits(const Word& w, const OperatorTuple& t) {
  for (int l : w.letters())
    if (l < 1 || l > t.arity()) throw ShapeError("word letter exceeds the tuple arity");
}

}  // namespace

Vector eval_word(const Word& w, const OperatorTuple& t, const Vector& x) {
  if (x.size() != t.dim()) throw ShapeError("signal length does not match operator dimension");
  check_word_fits(w, t);
  Vector out = x;
  const auto& letters = w.letters();
  for (auto it = letters.rbegin(); it != letters.rend(); ++it) out = t.letter(*it) * out;
  return out;
}

Vector eval_poly(const NCPoly& h, const OperatorTuple& t, const Vector& x) {
  if (x.size() != t.dim()) throw ShapeError("signal length does not match operator dimension");
  if (h.arity() != t.arity()) throw ShapeError("polynomial arity does not match the tuple");
  // Cache keyed by suffix: X^w x = T_{w_1} (X^{tail w} x).
  std::map<Word, Vector> cache;
  cache.emplace(Word{}, x);
  auto value = [&](auto&& self, const Word& w) -> const Vector& {
    if (auto it = cache.find(w); it != cache.end()) return it->second;
    Vector inner = self(self, w.tail());
    return cache.emplace(w, t.letter(w[0]) * inner).first->second;
  };
  Vector out = Vector::Zero(x.size());
  for (const auto& [w, c] : h.terms()) out.noalias() += c * value(value, w);
  return out;
}

MultiSignal eval_filter(const PolyMatrix& h, const OperatorTuple& t, const MultiSignal& x) {
  if (h.cols() != x.features()) throw ShapeError("filter input width does not match signal features");
  if (x.dim() != t.dim()) throw ShapeError("signal length does not match operator dimension");
  Matrix out = Matrix::Zero(x.dim(), h.rows());
  for (int b = 0; b < h.rows(); ++b)
    for (int a = 0; a < h.cols(); ++a) {
      const NCPoly& p = h.at(b, a);
      if (!p.is_zero()) out.col(b) += eval_poly(p, t, x.values().col(a));
    }
  return MultiSignal(std::move(out), x.measure_weight());
}

double box_norm(const MultiSignal& x) {
  double best = 0.0;
  for (int a = 0; a < x.features(); ++a) best = std::max(best, x.feature_norm(a));
  return best;
}

double box_distance(const MultiSignal& x, const MultiSignal& y) {
  if (x.dim() != y.dim() || x.features() != y.features())
    throw ShapeError("box distance needs signals of equal shape");
  if (x.measure_weight() != y.measure_weight())
    throw ShapeError("box distance needs signals with equal measure weight");
  return box_norm(MultiSignal(x.values() - y.values(), x.measure_weight()));
}

std::vector<double> op_distance(const OperatorTuple& t, const OperatorTuple& u,
                                const PowerIterationOptions& opts) {
  if (t.arity() != u.arity() || t.dim() != u.dim())
    throw ShapeError("op distance needs tuples of equal arity and dimension");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(t.arity()));
  for (int j = 1; j <= t.arity(); ++j)
    out.push_back(spectral_norm(SymOperator(t.letter(j) - u.letter(j)), opts));
  return out;
}

std::vector<double> exact_op_distance(const OperatorTuple& t, const OperatorTuple& u) {
  if (t.arity() != u.arity() || t.dim() != u.dim())
    throw ShapeError("op distance needs tuples of equal arity and dimension");
  std::vector<double> out;
  for (int j = 1; j <= t.arity(); ++j) out.push_back(exact_spectral_norm(SymOperator(t.letter(j) - u.letter(j))));
  return out;
}

namespace {

template <typename Seed>
std::vector<Matrix> build_words(const OperatorTuple& t, int degree, Seed seed) {
  if (degree < 0) throw PreconditionError("degree must be nonnegative");
  const int k = t.arity();
  const auto words = enumerate_basis(k, degree);
  std::vector<Matrix> out;
  out.reserve(words.size());
  out.push_back(seed);
  for (std::size_t i = 1; i < words.size(); ++i) {
    const Word& w = words[i];
    out.push_back(t.letter(w[0]) * out[basis_index(w.tail(), k)]);
  }
  return out;
}

}  // namespace

std::vector<Matrix> word_operators(const OperatorTuple& t, int degree) {
  return build_words(t, degree, Matrix::Identity(t.dim(), t.dim()));
}

std::vector<Matrix> word_features(const OperatorTuple& t, int degree, const Matrix& x) {
  if (x.rows() != t.dim()) throw ShapeError("signal length does not match operator dimension");
  return build_words(t, degree, x);
}

Matrix poly_operator(const NCPoly& h, const OperatorTuple& t) {
  if (h.arity() != t.arity()) throw ShapeError("polynomial arity does not match the tuple");
  const auto ops = word_operators(t, h.degree());
  Matrix out = Matrix::Zero(t.dim(), t.dim());
  for (const auto& [w, c] : h.terms()) out.noalias() += c * ops[basis_index(w, t.arity())];
  return out;
}

double block_operator_norm(std::span<const Matrix> blocks, int rows, int cols,
                           const PowerIterationOptions& opts) {
  if (rows < 1 || cols < 1 || blocks.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
    throw ShapeError("block grid does not match the number of blocks");
  double best = 0.0;
  for (int b = 0; b < rows; ++b) {
    double row = 0.0;
    for (int a = 0; a < cols; ++a)
      row += operator_norm(blocks[static_cast<std::size_t>(b) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(a)], opts);
    best = std::max(best, row);
  }
  return best;
}

double exact_block_operator_norm(std::span<const Matrix> blocks, int rows, int cols) {
  if (rows < 1 || cols < 1 || blocks.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
    throw ShapeError("block grid does not match the number of blocks");
  double best = 0.0;
  for (int b = 0; b < rows; ++b) {
    double row = 0.0;
    for (int a = 0; a < cols; ++a)
      row += exact_operator_norm(blocks[static_cast<std::size_t>(b) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(a)]);
    best = std::max(best, row);
  }
  return best;
}

}  // namespace gtnn
