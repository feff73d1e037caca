#pragma once

// Dense symmetric shift operators, operator tuples, multi-feature signals
// and the evaluation of polynomial filters on them.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "gtnn/ncpoly.hpp"

namespace gtnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Tolerance used when certifying that an operator is nonexpansive.
inline constexpr double kNonexpansiveSlack = 1e-10;

class SymOperator {
 public:
  /// Square input required; the stored matrix is (M + M^T) / 2.
  explicit SymOperator(const Matrix& m);

  static SymOperator identity(int n) { return SymOperator(Matrix::Identity(n, n)); }
  static SymOperator zero(int n) { return SymOperator(Matrix::Zero(n, n)); }

  int dim() const noexcept { return static_cast<int>(m_.rows()); }
  const Matrix& matrix() const noexcept { return m_; }

 private:
  Matrix m_;
};

struct PowerIterationOptions {
  double tol = 1e-9;
  int max_iter = 10'000;
  std::uint64_t seed = 0x5eedULL;
};


/// Largest singular value of a general matrix by power iteration on M^T M.
/// Exact 0 for the zero matrix; throws ConvergenceError otherwise when the
/// iteration budget runs out.
double operator_norm(const Matrix& m, const PowerIterationOptions& opts = {});

/// Spectral norm of a symmetric operator (power iteration on M).
double spectral_norm(const SymOperator& m, const PowerIterationOptions& opts = {});

/// Dense eigensolver versions, accurate to rounding. Used wherever a norm
/// feeds an inequality that must hold.
double exact_spectral_norm(const SymOperator& m);
double exact_operator_norm(const Matrix& m);

/// Max absolute row sum. Bounds the spectral norm of a symmetric matrix.
double max_row_sum(const Matrix& m);

/// M / max(1, ||M||_op). The zero matrix passes through unchanged.
SymOperator normalize_nonexpansive(const SymOperator& m);

/// k symmetric operators sharing a dimension. Copies share storage.
class OperatorTuple {
 public:
  explicit OperatorTuple(std::vector<SymOperator> ops);

  int arity() const noexcept { return static_cast<int>(data_->ops.size()); }
  int dim() const noexcept { return data_->ops.front().dim(); }
  /// 0-based access; word letters are 1-based, so letter j is (*this)[j-1].
  const SymOperator& operator[](std::size_t i) const { return data_->ops[i]; }
  const Matrix& letter(int j) const { return data_->ops[static_cast<std::size_t>(j - 1)].matrix(); }
  const std::vector<SymOperator>& operators() const noexcept { return data_->ops; }

  /// True when every operator has spectral norm <= 1 + kNonexpansiveSlack.
  bool nonexpansive_certified() const noexcept { return data_->certified; }

 private:
  struct Data {
    std::vector<SymOperator> ops;
    bool certified = false;
  };
  std::shared_ptr<const Data> data_;
};

/// Every operator passed through normalize_nonexpansive.
OperatorTuple normalize_tuple(const OperatorTuple& t);

/// n vertices x A features, with the mass carried by each vertex. The norm
/// of feature a is sqrt(measure_weight * sum_i values(i, a)^2).
class MultiSignal {
 public:
  MultiSignal(Matrix values, double measure_weight);

  int dim() const noexcept { return static_cast<int>(values_.rows()); }
  int features() const noexcept { return static_cast<int>(values_.cols()); }
  double measure_weight() const noexcept { return weight_; }
  const Matrix& values() const noexcept { return values_; }
  auto feature(int a) const { return values_.col(a); }
  double feature_norm(int a) const;

 private:
  Matrix values_;
  double weight_;
};

/// For w = (j1, ..., jd) returns T_j1(T_j2(...T_jd(x))).
Vector eval_word(const Word& w, const OperatorTuple& t, const Vector& x);

/// sum_a c_a X^a(T)(x).
Vector eval_poly(const NCPoly& h, const OperatorTuple& t, const Vector& x);

/// z_b = sum_a h_{b,a}(T)(x_a); the measure weight is carried over.
MultiSignal eval_filter(const PolyMatrix& h, const OperatorTuple& t, const MultiSignal& x);

double box_norm(const MultiSignal& x);
double box_distance(const MultiSignal& x, const MultiSignal& y);

/// Component j is ||T_j - U_j||_op.
std::vector<double> op_distance(const OperatorTuple& t, const OperatorTuple& u,
                                const PowerIterationOptions& opts = {});
/// The same with exact_spectral_norm.
std::vector<double> exact_op_distance(const OperatorTuple& t, const OperatorTuple& u);

/// Dense matrix of X^w(T) for each basis word of length <= degree, in
/// canonical order. Each word costs one n x n product.
std::vector<Matrix> word_operators(const OperatorTuple& t, int degree);

/// X^w(T) applied to the columns of `x` for each basis word of length
/// <= degree, in canonical order.
std::vector<Matrix> word_features(const OperatorTuple& t, int degree, const Matrix& x);

/// The dense matrix h(T).
Matrix poly_operator(const NCPoly& h, const OperatorTuple& t);

/// max_b sum_a ||M_{b,a}||_op for a row-major rows x cols grid of blocks.
double block_operator_norm(std::span<const Matrix> blocks, int rows, int cols,
                           const PowerIterationOptions& opts = {});
double exact_block_operator_norm(std::span<const Matrix> blocks, int rows, int cols);

}  // namespace gtnn
