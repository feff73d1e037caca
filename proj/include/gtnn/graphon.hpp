#pragma once

// Graphons on uniform grids, graphon signals, interpolation and sampling
// between vertex sets and [0,1], random and deterministic graph samplers,
// graphon norms, and the graph-to-graphon transfer harness.
//
// Cell j of a grid of size m is [j/m, (j+1)/m) (0-based). A grid-m object
// is exactly representable on any grid that m divides.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gtnn/linop.hpp"
#include "gtnn/network.hpp"

namespace gtnn {

inline constexpr int kMaxGridCells = 10'000;

/// Symmetric step function on the m x m grid with values in [0, 1].
class PiecewiseGraphon {
 public:
  /// Throws ShapeError for non-square or asymmetric input and
  /// PreconditionError for values outside [0, 1].
  explicit PiecewiseGraphon(Matrix values);

  static PiecewiseGraphon constant(int grid, double p) { return PiecewiseGraphon(Matrix::Constant(grid, grid, p)); }

  int grid() const noexcept { return static_cast<int>(values_.rows()); }
  const Matrix& values() const noexcept { return values_; }
  double operator()(double x, double y) const;
  /// The same function on grid m; m must be a multiple of grid().
  PiecewiseGraphon refined(int m) const;

 private:
  Matrix values_;
};

struct AnalyticGraphon {
  std::function<double(double, double)> fn;
  std::optional<double> lipschitz;
  std::string name;

  double operator()(double x, double y) const { return fn(x, y); }
};

/// Named families: "product" (xy), "constant:<p>", "min" (min(x,y)),
/// "exp:<c>" (exp(-c|x-y|)). Throws ConfigError otherwise. Symmetry and
/// range are spot-checked on random points.
AnalyticGraphon named_graphon(const std::string& spec);

/// A step function on the m-grid with A components; values is m x A.
class PiecewiseSignal {
 public:
  explicit PiecewiseSignal(Matrix values);

  int grid() const noexcept { return static_cast<int>(values_.rows()); }
  int features() const noexcept { return static_cast<int>(values_.cols()); }
  const Matrix& values() const noexcept { return values_; }
  /// Values with measure weight 1/m, so box norms are L2 norms on [0,1].
  MultiSignal as_multisignal() const { return MultiSignal(values_, 1.0 / grid()); }
  PiecewiseSignal refined(int m) const;

 private:
  Matrix values_;
};

/// Least common multiple of the grid sizes; throws GridCapError above
/// kMaxGridCells.
int common_grid(std::span<const int> grids);

/// W_G for a shift operator with entries in [0, 1].
PiecewiseGraphon induced_graphon(const SymOperator& s);

/// i_n: the vertex values (n x A) as a step function.
PiecewiseSignal interpolate(const Matrix& vertex_values);

/// n x m matrix whose row i averages an m-grid step function over the
/// n-grid cell i (exact for any n, m).
Matrix averaging_matrix(int n, int m);

/// p_n: cell averages over the n-grid, n x A.
Matrix sample_signal(const PiecewiseSignal& f, int n);
/// Cell averages of a function on [0,1] by 64-point midpoint quadrature.
Matrix sample_signal(const std::function<double(double)>& f, int n);

/// T_W f on the common grid of W and f.
PiecewiseSignal graphon_apply(const PiecewiseGraphon& w, const PiecewiseSignal& f);

/// ||T_W||_op and the distances between two graphons, computed exactly on
/// the common grid.
double graphon_op_norm(const PiecewiseGraphon& w);
double hs_norm(const PiecewiseGraphon& w);
double op_dist(const PiecewiseGraphon& a, const PiecewiseGraphon& b);
double hs_dist(const PiecewiseGraphon& a, const PiecewiseGraphon& b);

/// Distances to an analytic graphon. The HS distance uses 64 x 64 midpoint
/// quadrature per cell of b; the operator distance replaces `a` by its
/// midpoint samples on a grid of at least `resolution` cells that b's grid divides.
double op_dist(const AnalyticGraphon& a, const PiecewiseGraphon& b, int resolution = 512);
double hs_dist(const AnalyticGraphon& a, const PiecewiseGraphon& b);

/// Weighted template graph: S_ij is the mean of W over cell i x cell j.
SymOperator template_graph(const PiecewiseGraphon& w, int n);
SymOperator template_graph(const AnalyticGraphon& w, int n);

/// Graphon Erdos-Renyi graph: for i < j an edge with probability
/// W(v_i, v_j), v_i = (2i + 1) / 2n (0-based); zero diagonal.
SymOperator graphon_er(const PiecewiseGraphon& w, int n, std::uint64_t seed);
SymOperator graphon_er(const AnalyticGraphon& w, int n, std::uint64_t seed);

/// T_{W_j} as matrices acting on grid-m values: refined values / m.
OperatorTuple graphon_tuple(std::span<const PiecewiseGraphon> ws, int m);

/// The graph tuple scaled by 1/n.
OperatorTuple normalized_graph_tuple(std::span<const SymOperator> graphs);

struct TransferReport {
  /// Box distance on the common grid between the graphon network on f and
  /// the interpolated output of the normalized graph network on p_n f.
  double empirical = 0.0;
  double bound = 0.0;
  /// ||f - i_n p_n f||
  double discretization = 0.0;
  /// ||T_{W_j} - T_{W_{G_j}}||_op
  std::vector<double> op_distance;
  /// Box norm of the graphon network output.
  double output_norm = 0.0;
  int grid = 0;
};

/// Runs both networks and evaluates the layer-recursive transfer bound.
TransferReport transfer_error(const NetworkSpec& net, std::span<const PiecewiseGraphon> ws,
                              std::span<const SymOperator> graphs, const PiecewiseSignal& f);

/// Relative discrepancy between the graphon network on the induced graphons
/// and the interpolated normalized graph network. Throws PreconditionError
/// when a polynomial has a constant term.
double identity_discrepancy(const NetworkSpec& net, std::span<const SymOperator> graphs, const PiecewiseSignal& f);

}  // namespace gtnn
