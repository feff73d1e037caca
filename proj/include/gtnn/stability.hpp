#pragma once

// Perturbation bounds for graph-tuple networks and a harness that measures
// actual output perturbations against them.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gtnn/linop.hpp"
#include "gtnn/network.hpp"

namespace gtnn {

struct LayerTerms {
  double signal_term = 0.0;    // incoming difference times max_b sum_a C
  double operator_term = 0.0;  // m times max_b sum_a sum_j C_j * opdist_j
};

struct PerturbationReport {
  double empirical = 0.0;
  /// Smallest of the valid bounds below.
  double bound = 0.0;
  /// Layer recursion driven by expansion constants.
  double constant_bound = 0.0;
  /// Depth-linear form; present only when every layer has C <= 1.
  std::optional<double> simplified_bound;
  /// The same recursion with computed block operator norms of each filter.
  double operator_bound = 0.0;
  std::vector<LayerTerms> layers;
  double input_distance = 0.0;
  double input_min_norm = 0.0;
  std::vector<double> op_distance;
};

/// ||f-g|| * max_b sum_a C(h_ba) + m * max_b sum_a sum_j C_j(h_ba) * opdist_j
/// with m = min(||f||, ||g||) in the box norm.
double layer_bound(const LayerSpec& h, const MultiSignal& f, const MultiSignal& g,
                   std::span<const double> opdist);

/// Layer-recursive bound for the whole network on (T, f) versus (U, g).
/// Both tuples must be certified nonexpansive.
PerturbationReport network_bound(const NetworkSpec& net, const OperatorTuple& t, const OperatorTuple& u,
                                 const MultiSignal& f, const MultiSignal& g);

/// The recursion alone: e_0 = input_distance and
/// e_{l+1} = e_l * max_b sum_a C + min_norms[l] * max_b sum_a sum_j C_j * opdist_j.
double recursion_bound(const NetworkSpec& net, double input_distance, std::span<const double> min_norms,
                       std::span<const double> opdist);

/// ||f-g|| + m * sum_layers max_b sum_a sum_j C_j * ||T_j - U_j||. Throws
/// PreconditionError naming the first layer with C > 1.
double simplified_bound(const NetworkSpec& net, const OperatorTuple& t, const OperatorTuple& u,
                        const MultiSignal& f, const MultiSignal& g);

/// Per-layer filter quantities for a tuple T and a perturbed tuple Z.
struct FilterMetrics {
  double filter_op = 0.0;          // max_b sum_a ||h_ba(T)||
  double c_total = 0.0;            // max_b sum_a C(h_ba)
  double diff_op = 0.0;            // max_b sum_a ||h_ba(T) - h_ba(Z)||
  double diff_entry_bound = 0.0;   // max_ba sum_j C_j(h_ba) ||T_j - Z_j||
  double diff_block_bound = 0.0;   // max_b sum_a sum_j C_j(h_ba) ||T_j - Z_j||
};
std::vector<FilterMetrics> filter_metrics(const NetworkSpec& net, const OperatorTuple& t, const OperatorTuple& z);

/// Z_j = normalize(T_j + s * E_j / ||E_j||) with E_j = (G + G^T)/2 for a
/// standard Gaussian G drawn from `seed`.
OperatorTuple gaussian_perturbation(const OperatorTuple& t, double size, std::uint64_t seed);

struct NamedNetwork {
  std::string name;
  NetworkSpec net;
};

struct SweepRow {
  std::string model;
  double size = 0.0;
  double mean_opdist = 0.0;
  double empirical = 0.0;
  double bound = 0.0;
  double filter_diff_op = 0.0;
  double filter_diff_entry_bound = 0.0;
  double filter_diff_block_bound = 0.0;
};

/// For every size and trial draws one perturbation (shared by all models in
/// that trial), then averages the output perturbation and the network bound
/// over `inputs`. Rows come out model-major, then by size, averaged over trials.
std::vector<SweepRow> perturb_sweep(std::span<const NamedNetwork> nets, const OperatorTuple& t,
                                    std::span<const MultiSignal> inputs, std::span<const double> sizes,
                                    int trials, std::uint64_t seed);

}  // namespace gtnn
