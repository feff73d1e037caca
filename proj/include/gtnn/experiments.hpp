#pragma once

// Experiment drivers behind the command-line tool. Each runner takes a fully
// defaulted config, writes CSV/JSON artifacts plus a manifest into an output
// directory, and returns the headline numbers so tests can check them
// without re-reading files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gtnn/data.hpp"
#include "gtnn/io.hpp"
#include "gtnn/network.hpp"
#include "gtnn/stability.hpp"

namespace gtnn {

/// CSV header of every artifact kind, versioned together.
inline constexpr int kCsvSchemaVersion = 1;
const std::vector<std::string>& csv_schema(const std::string& kind);

/// Collects artifacts in `<out>.partial` and moves them to `<out>` on
/// commit, replacing an older run. Files listed in the manifest carry their
/// FNV-1a hash.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path out);
  ~OutputDir();
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  /// Path for a new artifact, relative names only.
  std::filesystem::path file(const std::string& name);
  void commit(const std::string& experiment, const Json& resolved_config);
  const std::filesystem::path& final_path() const noexcept { return out_; }

 private:
  std::filesystem::path out_;
  std::filesystem::path staging_;
  std::vector<std::string> files_;
  bool committed_ = false;
};

struct SynthStabilityConfig {
  SynthConfig data;
  int degree = 3;
  int hidden = 2;
  int epochs_one_layer = 3000;
  int epochs_two_layer = 2500;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda = 10.0;
  double init_scale = 15.0;
  /// The penalized models start from this smaller scale, inside their
  /// constraint sets.
  double stable_init_scale = 1.5;
  std::uint64_t seed = 0;
  /// Stability metrics in the history are recorded every this many epochs
  /// against a perturbation of size history_perturbation.
  int monitor_every = 50;
  double history_perturbation = 0.1;
  std::vector<double> sweep_sizes{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
  int sweep_trials = 20;
  int sweep_inputs = 50;
};

struct TrainedModel {
  std::string name;
  NetworkSpec net;
  double test_r2 = 0.0;
  ExpansionVectors constants;
  std::optional<ExpansionVectors> targets;
};

struct SynthStabilityResult {
  std::vector<TrainedModel> models;  // one_layer, one_layer_stable, two_layer, two_layer_stable
  std::vector<SweepRow> sweep;
  double seconds = 0.0;
};

SynthStabilityResult run_synth_stability(const SynthStabilityConfig& config, const std::filesystem::path& out);

struct TransferSweepConfig {
  SynthConfig data{300, 0.05, 1, 30, 0.1, 800, 200, 0};
  std::vector<int> sizes{100, 150, 200, 250, 300};
  int degree = 3;
  int epochs = 2000;
  double learning_rate = 0.01;
  double init_scale = 15.0;
  std::uint64_t seed = 0;
  /// Also trains a lambda-penalized model per size with targets at half the
  /// unconstrained constants.
  bool stable = false;
  double lambda = 10.0;
};

struct TransferSweepRow {
  std::string model;
  int m = 0;
  std::vector<double> op_distance;
  double best_test_mse = 0.0;
  int best_epoch = 0;
};

struct TransferSweepResult {
  std::vector<TransferSweepRow> rows;
  double seconds = 0.0;
};

TransferSweepResult run_transfer_sweep(const TransferSweepConfig& config, const std::filesystem::path& out);

struct MovieLensConfig {
  std::filesystem::path ratings;
  std::vector<int> knn{10, 15};
  int min_overlap = 5;
  /// Degrees giving equal coefficient counts: words of length <= 2 in two
  /// letters and <= 6 in one letter both number 7.
  int multi_degree = 2;
  int single_degree = 6;
  double observed_fraction = 0.5;
  double train_fraction = 0.8;
  int iterations = 500;
  double learning_rate = 0.01;
  double init_scale = 1.0;
  std::vector<double> ridges{0.0, 1e-4, 1e-3, 1e-2};
  std::uint64_t seed = 0;
};

struct MovieLensModelResult {
  std::string model;
  double ridge = 0.0;
  double best_test_mse = 0.0;
  int best_iteration = 0;
};

struct MovieLensResult {
  int users = 0;
  int items = 0;
  std::size_t ratings = 0;
  std::vector<int> isolated;  // per knn value
  std::vector<MovieLensModelResult> models;
  double best_multi = 0.0;   // best over the graph-tuple models
  double best_single = 0.0;  // best over the single-graph models
  /// Largest gap between the one-variable graph-tuple trajectory and the
  /// first single-graph trajectory (0 when they coincide).
  double embedding_gap = 0.0;
  double seconds = 0.0;
};

/// Uses config.ratings when `table` is null.
MovieLensResult run_movielens(const MovieLensConfig& config, const std::filesystem::path& out,
                              const RatingsTable* table = nullptr);

struct GraphonSampleConfig {
  /// Named family ("product", "min", "constant:<p>", "exp:<c>") unless
  /// graphon_file is set. "constant:<p>" is evaluated exactly.
  std::string graphon = "constant:0.5";
  std::filesystem::path graphon_file;
  std::vector<int> sizes{16, 32, 64, 128};
  int seeds = 10;
  std::uint64_t seed = 0;
  bool save_graphs = true;
};

struct GraphonSampleRow {
  int n = 0;
  double template_hs = 0.0;
  double er_op_mean = 0.0;
  double er_op_sd = 0.0;
  double er_hs_mean = 0.0;
  double er_hs_sd = 0.0;
  double er_hs_min = 0.0;
};

std::vector<GraphonSampleRow> run_graphon_sample(const GraphonSampleConfig& config,
                                                 const std::filesystem::path& out);

struct BoundsReportConfig {
  std::filesystem::path model;
  std::filesystem::path graphs;
  /// Signal file; when empty, `signal_count` uniform [0,1] signals are drawn.
  std::filesystem::path signal;
  int signal_count = 10;
  double perturbation = 0.1;
  std::uint64_t seed = 0;
};

/// One report per signal for the model on the stored graphs against a
/// Gaussian perturbation of them. Throws NumericError when a bound is violated.
std::vector<PerturbationReport> run_bounds_report(const BoundsReportConfig& config, const std::filesystem::path& out);

// Config files: a JSON object of the fields above. Unknown keys throw
// ConfigError; missing keys keep their defaults.
SynthStabilityConfig synth_stability_config(const Json& j);
TransferSweepConfig transfer_sweep_config(const Json& j);
MovieLensConfig movielens_config(const Json& j);
GraphonSampleConfig graphon_sample_config(const Json& j);
BoundsReportConfig bounds_report_config(const Json& j);

Json to_json(const SynthStabilityConfig& c);
Json to_json(const TransferSweepConfig& c);
Json to_json(const MovieLensConfig& c);
Json to_json(const GraphonSampleConfig& c);
Json to_json(const BoundsReportConfig& c);

}  // namespace gtnn
