#pragma once

// Synthetic circulant-graph regression data, its graphon down-sampling, and
// MovieLens-style ratings ingestion with user correlation graphs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gtnn/linop.hpp"
#include "gtnn/network.hpp"

namespace gtnn {

struct Dataset {
  SampleSet train;
  SampleSet test;
};

/// S_ii = p and S_ij = (1-p)/2 for |i-j| mod n in {l, n-l}; when l = n-l
/// both contributions land on the same entry. Requires 1 <= l < n.
SymOperator circulant_shift(int n, double p, int l);

/// 0.76 X2 X1 + 0.33 X1 X2 + 0.3 X1^3.
NCPoly circulant_generator();

struct SynthConfig {
  int n = 293;
  double p = 0.05;
  int l1 = 1;
  int l2 = 30;
  double sigma = 0.1;
  int n_train = 800;
  int n_test = 200;
  std::uint64_t seed = 0;
};

struct SynthData {
  Dataset data;
  OperatorTuple tuple;
};

/// x uniform on [0,1]^n, y = generator(S1, S2) x + N(0, sigma^2) noise, one
/// feature each, counting measure (weight 1).
SynthData synth_circulant_dataset(const SynthConfig& config);

struct DownsampledData {
  int m = 0;
  /// (n/m) * template_graph(W_j, m): row sums are preserved and m = n gives
  /// back the original graphs.
  OperatorTuple tuple;
  SampleSet train;
  /// ||T_{W_j} - T_{W_{G_j}}||_op for the induced graphons W_j of the
  /// original graphs and the m-vertex templates G_j.
  std::vector<double> op_distance;
};

/// Training data on m vertices from graphs on n vertices: template graphs of
/// the induced graphons and p_m of the interpolated samples.
DownsampledData downsample_experiment(std::span<const SymOperator> graphs, const SampleSet& train, int m);

struct Rating {
  int user = 0;
  int item = 0;
  int rating = 0;
  std::int64_t timestamp = 0;
};

/// Ratings with dense 0-based indices for users and items, assigned in
/// increasing raw-id order.
class RatingsTable {
 public:
  RatingsTable() = default;
  /// Throws DataError on a duplicate (user, item) pair or a rating outside 1..5.
  explicit RatingsTable(std::vector<Rating> records);

  const std::vector<Rating>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  int users() const noexcept { return static_cast<int>(user_ids_.size()); }
  int items() const noexcept { return static_cast<int>(item_ids_.size()); }
  int user_index(int raw) const { return user_index_.at(raw); }
  int item_index(int raw) const { return item_index_.at(raw); }
  const std::vector<int>& user_ids() const noexcept { return user_ids_; }
  const std::vector<int>& item_ids() const noexcept { return item_ids_; }

 private:
  std::vector<Rating> records_;
  std::vector<int> user_ids_;
  std::vector<int> item_ids_;
  std::map<int, int> user_index_;
  std::map<int, int> item_index_;
};

/// Four tab-separated integers per line: user, item, rating, timestamp.
/// Throws DataError with the 1-based line number on malformed input.
RatingsTable parse_movielens(std::istream& in);
RatingsTable load_movielens(const std::filesystem::path& path);

struct Deviation {
  int user = 0;  // dense index
  int item = 0;  // dense index
  double value = 0.0;
};

struct CenteredRatings {
  int users = 0;
  int items = 0;
  std::vector<Deviation> entries;
  std::vector<double> user_means;
};

/// rating - mean rating of its user, per record.
CenteredRatings center_ratings(const RatingsTable& t);

struct CorrelationGraph {
  SymOperator shift;
  int isolated = 0;
};

/// Pearson correlations between users over co-rated items (defined only
/// with at least min_overlap common items and nonzero variances), negative
/// and undefined values set to 0, mutual k-nearest-neighbour sparsification
/// with ties broken toward lower user index, then normalize_nonexpansive.
CorrelationGraph correlation_graph(const RatingsTable& t, int knn, int min_overlap = 5);

struct MovieSampleConfig {
  double observed_fraction = 0.5;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct MovieSamples {
  Dataset data;
  std::vector<int> train_items;  // dense item indices, in sample order
  std::vector<int> test_items;
  int dropped = 0;               // items with fewer than two ratings
};

/// One sample per item: input keeps round(q * r) of its r observed
/// deviations (at least one), target holds all observed deviations and the
/// mask marks the observed entries left out of the input. Weight 1.
MovieSamples movie_samples(const CenteredRatings& deviations, const MovieSampleConfig& config);

}  // namespace gtnn
