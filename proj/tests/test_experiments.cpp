#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "gtnn/error.hpp"
#include "gtnn/experiments.hpp"
#include "gtnn/graphon.hpp"
#include "random_fixtures.hpp"

using namespace gtnn;
using namespace gtnn::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gtnn_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

std::string joined(const std::vector<std::string>& cols) {
  std::string s;
  for (const auto& c : cols) s += (s.empty() ? "" : ",") + c;
  return s;
}

// Every CSV listed in the manifest has its schema header and its recorded hash.
void check_manifest(const fs::path& dir) {
  const Json m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["csv_schema_version"], kCsvSchemaVersion);
  for (const auto& a : m["artifacts"]) {
    const std::string file = a["file"];
    EXPECT_EQ(a["fnv1a64"], file_hash(dir / file)) << file;
    if (fs::path(file).extension() == ".csv")
      EXPECT_EQ(first_line(dir / file), joined(csv_schema(fs::path(file).stem().string()))) << file;
  }
  EXPECT_FALSE(fs::exists(fs::path(dir.string() + ".partial")));
}

SynthStabilityConfig tiny_synth() {
  SynthStabilityConfig c;
  c.data.n = 30;
  c.data.l2 = 4;
  c.data.n_train = 40;
  c.data.n_test = 10;
  c.epochs_one_layer = 60;
  c.epochs_two_layer = 40;
  c.monitor_every = 20;
  c.sweep_sizes = {0.0, 0.2};
  c.sweep_trials = 2;
  c.sweep_inputs = 3;
  return c;
}

}  // namespace

TEST(Config, DefaultsRoundTripAndUnknownKeys) {
  const SynthStabilityConfig d;
  const auto back = synth_stability_config(to_json(d));
  EXPECT_EQ(to_json(back), to_json(d));
  EXPECT_EQ(synth_stability_config(Json::object()).data.n, 293);
  auto j = Json::parse(R"({"data": {"n": 50, "sigma": 0.2}, "epochs_one_layer": 7})");
  auto c = synth_stability_config(j);
  EXPECT_EQ(c.data.n, 50);
  EXPECT_EQ(c.data.sigma, 0.2);
  EXPECT_EQ(c.data.l2, 30);
  EXPECT_EQ(c.epochs_one_layer, 7);
  try {
    synth_stability_config(Json::parse(R"({"data": {"nn": 3}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "data.nn: unknown field");
  }
  EXPECT_THROW(transfer_sweep_config(Json::parse(R"({"sizes": [100, 1.5]})")), ConfigError);
  EXPECT_THROW(movielens_config(Json::parse(R"({"ridges": 0.1})")), ConfigError);
  EXPECT_THROW(graphon_sample_config(Json::parse(R"({"seed": -1})")), ConfigError);
  EXPECT_EQ(to_json(movielens_config(to_json(MovieLensConfig{}))), to_json(MovieLensConfig{}));
}

TEST(OutputDir, CommitReplacesAnOlderRun) {
  const auto out = scratch("outdir");
  fs::create_directories(out);
  std::ofstream(out / "stale.txt") << "old";
  {
    OutputDir dir(out);
    std::ofstream(dir.file("sub/a.txt")) << "hello";
    EXPECT_FALSE(fs::exists(out / "sub"));
    dir.commit("test", Json{{"x", 1}});
  }
  EXPECT_FALSE(fs::exists(out / "stale.txt"));
  EXPECT_TRUE(fs::exists(out / "sub/a.txt"));
  const Json m = read_json(out / "manifest.json");
  EXPECT_EQ(m["config"]["x"], 1);
  EXPECT_EQ(m["artifacts"][0]["file"], "sub/a.txt");
  fs::remove_all(out);
}

TEST(OutputDir, FailedRunLeavesTheOldOutputAlone) {
  const auto out = scratch("outdir_fail");
  fs::create_directories(out);
  std::ofstream(out / "keep.txt") << "old";
  {
    OutputDir dir(out);
    std::ofstream(dir.file("a.txt")) << "partial";
  }
  EXPECT_TRUE(fs::exists(out / "keep.txt"));
  EXPECT_TRUE(fs::exists(fs::path(out.string() + ".partial") / "a.txt"));
  fs::remove_all(out);
  fs::remove_all(out.string() + ".partial");
}

TEST(SynthStability, WritesEveryArtifact) {
  const auto out = scratch("synth");
  const auto r = run_synth_stability(tiny_synth(), out);
  ASSERT_EQ(r.models.size(), 4u);
  EXPECT_EQ(r.models[0].net.parameter_count(), 15u);
  EXPECT_EQ(r.models[2].net.parameter_count(), 60u);
  ASSERT_TRUE(r.models[1].targets);
  EXPECT_DOUBLE_EQ(r.models[1].targets->c_total[0], r.models[0].constants.c_total[0] / 2);
  EXPECT_EQ(r.sweep.size(), 8u);
  for (const auto& row : r.sweep) {
    EXPECT_LE(row.empirical, row.bound * (1 + 1e-9) + 1e-12);
    if (row.size == 0.0) EXPECT_EQ(row.empirical, 0.0);
  }
  check_manifest(out);
  const auto reloaded = network_from_json(read_json(out / "model_two_layer_stable.json"));
  EXPECT_EQ(reloaded.coefficients(), r.models[3].net.coefficients());
  fs::remove_all(out);
}

TEST(SynthStability, SameSeedSameBytes) {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  auto c = tiny_synth();
  c.seed = c.data.seed = 9;
  run_synth_stability(c, a);
  run_synth_stability(c, b);
  for (const char* f : {"history.csv", "sweep.csv", "stability.csv", "model_two_layer.json"})
    EXPECT_EQ(file_hash(a / f), file_hash(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(TransferSweep, FullSizeRunEqualsDirectTraining) {
  const auto out = scratch("transfer");
  TransferSweepConfig c;
  c.data = {24, 0.05, 1, 5, 0.1, 30, 10, 4};
  c.sizes = {12, 24};
  c.epochs = 30;
  const auto r = run_transfer_sweep(c, out);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[1].op_distance, (std::vector<double>{0.0, 0.0}));

  const auto synth = synth_circulant_dataset(c.data);
  TrainConfig tc;
  tc.epochs = c.epochs;
  tc.init_scale = c.init_scale;
  TrainOptions opt;
  opt.test_samples = &synth.data.test;
  const auto direct =
      train(init_network({2, 3, {1, 1}, {}, {}}, c.init_scale, c.seed), synth.tuple, synth.data.train, tc, opt);
  double best = 1e300;
  for (const auto& h : direct.history) best = std::min(best, *h.test_mse);
  EXPECT_EQ(r.rows[1].best_test_mse, best);
  check_manifest(out);
  fs::remove_all(out);
}

TEST(MovieLens, EmbeddingReproducesTheSingleGraphTrajectory) {
  std::mt19937_64 rng(5);
  const auto table = synthetic_ratings(rng, 60, 90, 0.25);
  MovieLensConfig c;
  c.iterations = 40;
  c.ridges = {0.0, 1e-3};
  c.knn = {5, 8};
  const auto out = scratch("movielens");
  const auto r = run_movielens(c, out, &table);
  EXPECT_EQ(r.embedding_gap, 0.0);
  EXPECT_EQ(r.models.size(), 6u);
  EXPECT_EQ(r.users, 60);
  check_manifest(out);
  fs::remove_all(out);
  c.ratings.clear();
  EXPECT_THROW(run_movielens(c, out), ConfigError);
}

TEST(GraphonSample, ConstantGraphonAndDegenerateSize) {
  const auto out = scratch("graphon");
  GraphonSampleConfig c;
  c.sizes = {1, 8, 32};
  c.seeds = 4;
  const auto rows = run_graphon_sample(c, out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].template_hs, 0.0);
  EXPECT_EQ(rows[0].er_hs_mean, 0.5);  // single vertex, empty graph
  for (const auto& r : rows) EXPECT_GE(r.er_hs_min, 0.5);
  EXPECT_TRUE(fs::exists(out / "graphs/er_seed0_n8.json"));
  check_manifest(out);
  fs::remove_all(out);
}

TEST(GraphonSample, ReadsPiecewiseGraphonFiles) {
  const auto dir = scratch("graphon_file");
  fs::create_directories(dir);
  Matrix v(2, 2);
  v << 0.9, 0.1, 0.1, 0.9;
  write_json(dir / "w.json", graphon_to_json(PiecewiseGraphon(v)));
  GraphonSampleConfig c;
  c.graphon_file = dir / "w.json";
  c.sizes = {2, 4};
  c.seeds = 2;
  const auto rows = run_graphon_sample(c, dir / "out");
  EXPECT_EQ(rows[0].template_hs, 0.0);
  EXPECT_EQ(rows[1].template_hs, 0.0);
  fs::remove_all(dir);
}

TEST(BoundsReport, IdentityPerturbationGivesAZeroReport) {
  const auto dir = scratch("bounds");
  fs::create_directories(dir);
  std::mt19937_64 rng(6);
  const auto t = random_nonexpansive_tuple(rng, 2, 12);
  write_json(dir / "graphs.json", graphs_to_json(t.operators()));
  write_json(dir / "model.json", network_to_json(random_network(rng, 2, 2, {1, 2, 1}, true, 1.0)));
  BoundsReportConfig c;
  c.model = dir / "model.json";
  c.graphs = dir / "graphs.json";
  c.perturbation = 0.0;
  for (const auto& r : run_bounds_report(c, dir / "zero")) {
    EXPECT_EQ(r.empirical, 0.0);
    EXPECT_EQ(r.bound, 0.0);
  }
  c.perturbation = 0.2;
  for (const auto& r : run_bounds_report(c, dir / "out")) {
    EXPECT_GT(r.empirical, 0.0);
    EXPECT_LE(r.empirical, r.bound);
  }
  check_manifest(dir / "out");
  std::ofstream(dir / "model.json") << R"({"format": "gtnn.network", "version": 1, "arity": 2})";
  try {
    run_bounds_report(c, dir / "bad");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "degree: missing field");
  }
  fs::remove_all(dir);
}
