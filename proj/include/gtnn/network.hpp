#pragma once

// Graph-tuple neural networks: layers of polynomial operator filters
// followed by a componentwise activation, with exact gradients with respect
// to every polynomial coefficient and a full-batch ADAM training loop with
// the expansion-constant penalty.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gtnn/linop.hpp"
#include "gtnn/ncpoly.hpp"

namespace gtnn {

enum class Activation { relu, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct LayerSpec {
  PolyMatrix polys;
  Activation activation = Activation::relu;

  int out_features() const noexcept { return polys.rows(); }
  int in_features() const noexcept { return polys.cols(); }
};

/// A stack of layers over k variables with degree cap d. Every polynomial
/// may only use words from `support` (all words of length <= d unless a
/// smaller set is given); the support fixes the trainable coefficients.
class NetworkSpec {
 public:
  NetworkSpec(int arity, int degree, std::vector<LayerSpec> layers);
  NetworkSpec(int arity, int degree, std::vector<LayerSpec> layers, std::vector<Word> support);

  int arity() const noexcept { return arity_; }
  int degree() const noexcept { return degree_; }
  int depth() const noexcept { return static_cast<int>(layers_.size()); }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const LayerSpec& layer(int i) const { return layers_.at(static_cast<std::size_t>(i)); }
  /// (alpha_0, ..., alpha_N).
  std::vector<int> feature_sizes() const;
  const std::vector<Word>& support() const noexcept { return support_; }
  bool full_support() const noexcept { return full_support_; }

  std::size_t parameter_count() const noexcept;
  /// Ordered by layer, then output feature b, input feature a, then support word.
  std::vector<double> coefficients() const;
  NetworkSpec with_coefficients(std::span<const double> coeffs) const;
  /// The first `layers` layers; used for the truncated networks in bounds.
  NetworkSpec truncated(int layers) const;

 private:
  int arity_;
  int degree_;
  std::vector<LayerSpec> layers_;
  std::vector<Word> support_;
  bool full_support_ = true;
};

/// Shape description used to initialize a network.
struct NetworkShape {
  int arity = 1;
  int degree = 1;
  std::vector<int> feature_sizes;
  /// One per layer; empty means relu on hidden layers and identity on the last.
  std::vector<Activation> activations;
  /// Empty means every word of length <= degree.
  std::vector<Word> support;
};

/// Coefficients i.i.d. uniform on [-s, s], s = init_scale / (|support| * alpha_j),
/// drawn in canonical coefficient order from a generator seeded with `seed`.
NetworkSpec init_network(const NetworkShape& shape, double init_scale, std::uint64_t seed);

struct ForwardCache {
  std::vector<MultiSignal> inputs;          // input to each layer
  std::vector<MultiSignal> pre_activations; // filter output of each layer
  std::uint64_t fingerprint = 0;
};

struct ForwardResult {
  MultiSignal output;
  ForwardCache cache;
};

ForwardResult forward(const NetworkSpec& net, const OperatorTuple& t, const MultiSignal& x);
MultiSignal predict(const NetworkSpec& net, const OperatorTuple& t, const MultiSignal& x);

/// Forward pass on many signals at once. inputs[a] is n x S (one column per
/// signal). Returns the post-activation signals of every layer, with the
/// inputs at index 0, so result[l][b] is n x S.
std::vector<std::vector<Matrix>> forward_layers(const NetworkSpec& net, const OperatorTuple& t,
                                                const std::vector<Matrix>& inputs);

/// Gradient of a scalar loss with respect to the coefficients, given
/// dLoss/dy for the network output. Throws PreconditionError when the
/// cache was produced by a different network.
std::vector<double> backward(const NetworkSpec& net, const OperatorTuple& t, const ForwardCache& cache,
                             const MultiSignal& dloss_dy);

struct LossResult {
  double loss = 0.0;
  Matrix dloss_dy;
};

/// Mean of squared entry differences over unmasked entries (mask entries
/// nonzero are kept). Throws PreconditionError when nothing is unmasked.
LossResult mse_loss(const MultiSignal& y_hat, const MultiSignal& y, const Matrix* mask = nullptr);

/// 1 - SS_res / SS_tot over all entries; throws PreconditionError for constant y.
double r_squared(std::span<const Matrix> y_hat, std::span<const Matrix> y);
double r_squared(const MultiSignal& y_hat, const MultiSignal& y);

struct Sample {
  MultiSignal input;
  MultiSignal target;
  std::optional<Matrix> mask;
};
using SampleSet = std::vector<Sample>;

/// C-vector and C_j-vectors of a network: per layer, the max over output
/// rows of the summed constants along the row.
struct ExpansionVectors {
  std::vector<double> c_total;                  // N entries
  std::vector<std::vector<double>> c_per_var;  // k x N
};
ExpansionVectors expansion_vectors(const NetworkSpec& net);

struct TrainConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 100;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  std::optional<std::vector<double>> c_total_targets;
  std::optional<std::vector<std::vector<double>>> c_per_var_targets;
  double init_scale = 1.0;
  /// L2 penalty ridge * ||c||^2 added to the objective.
  double ridge = 0.0;
};

struct PenaltyResult {
  double value = 0.0;
  std::vector<double> subgradient;
};

/// lambda * [sum_l max(0, C[l] - target[l]) + sum_j sum_l max(0, C_j[l] - target_j[l])].
/// The subgradient follows the first maximizing row on ties and uses sign(c)
/// with sign(0) = 0. Missing targets with lambda > 0 throw ConfigError.
PenaltyResult penalty(const NetworkSpec& net, const TrainConfig& config);

/// Pooled MSE over a sample set and its exact coefficient gradient, computed
/// sample by sample with forward/backward.
struct Objective {
  double loss = 0.0;
  std::vector<double> gradient;
};
Objective reference_objective(const NetworkSpec& net, const OperatorTuple& t, const SampleSet& samples);

/// The same objective evaluated on the whole set at once. Word features of
/// the fixed inputs are computed once at construction.
class BatchObjective {
 public:
  BatchObjective(const NetworkSpec& shape, const OperatorTuple& t, const SampleSet& samples);
  ~BatchObjective();
  BatchObjective(BatchObjective&&) noexcept;
  BatchObjective& operator=(BatchObjective&&) noexcept;

  /// Loss at `coeffs`; fills `gradient` when non-null.
  double evaluate(std::span<const double> coeffs, std::vector<double>* gradient) const;
  /// Network outputs per sample, each n x alpha_N.
  std::vector<Matrix> predictions(std::span<const double> coeffs) const;
  double r_squared(std::span<const double> coeffs) const;
  /// Loss and R^2 from one forward pass; R^2 is empty for constant targets.
  std::pair<double, std::optional<double>> loss_and_r_squared(std::span<const double> coeffs) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double penalty = 0.0;
  ExpansionVectors constants;
  std::optional<double> test_mse;
  std::optional<double> test_r2;
};
using TrainHistory = std::vector<EpochRecord>;

struct TrainOptions {
  /// Evaluated every epoch when set; may live on a different tuple.
  const OperatorTuple* test_tuple = nullptr;
  const SampleSet* test_samples = nullptr;
  /// Called after every `monitor_every` epochs with the current network.
  std::function<void(int epoch, const NetworkSpec&)> monitor;
  int monitor_every = 0;
};

struct TrainResult {
  NetworkSpec net;
  TrainHistory history;
};

/// Full-batch ADAM on loss + penalty (+ ridge) for config.epochs epochs,
/// starting from `net`. Throws NonFiniteLossError on a non-finite objective.
TrainResult train(const NetworkSpec& net, const OperatorTuple& t, const SampleSet& train_set,
                  const TrainConfig& config, const TrainOptions& options = {});

/// One ADAM step in place. `step` is 1-based.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  int step = 0;
};
void adam_update(std::vector<double>& params, std::span<const double> grad, AdamState& state,
                 const TrainConfig& config);

}  // namespace gtnn
