#include "gtnn/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "gtnn/error.hpp"
#include "gtnn/graphon.hpp"
#include "gtnn/parallel.hpp"

namespace gtnn {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---- config plumbing -------------------------------------------------------

class ConfigReader {
 public:
  ConfigReader(const Json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(where("") + "expected an object");
  }

  template <class T>
  void operator()(const char* key, T& value) {
    known_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) read(*it, value, prefix_ + key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!known_.count(key)) throw ConfigError(prefix_ + key + ": unknown field");
  }

 private:
  std::string where(const std::string& key) const {
    const std::string p = prefix_ + key;
    return p.empty() ? "config: " : p + ": ";
  }

  static void read(const Json& j, int& v, const std::string& path) {
    if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
    const auto x = j.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      throw ConfigError(path + ": integer out of range");
    v = static_cast<int>(x);
  }
  static void read(const Json& j, std::uint64_t& v, const std::string& path) {
    if (!j.is_number_unsigned()) throw ConfigError(path + ": expected a nonnegative integer");
    v = j.get<std::uint64_t>();
  }
  static void read(const Json& j, double& v, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path + ": expected a number");
    v = j.get<double>();
  }
  static void read(const Json& j, bool& v, const std::string& path) {
    if (!j.is_boolean()) throw ConfigError(path + ": expected true or false");
    v = j.get<bool>();
  }
  static void read(const Json& j, std::string& v, const std::string& path) {
    if (!j.is_string()) throw ConfigError(path + ": expected a string");
    v = j.get<std::string>();
  }
  static void read(const Json& j, std::filesystem::path& v, const std::string& path) {
    std::string s;
    read(j, s, path);
    v = s;
  }
  template <class T>
  static void read(const Json& j, std::vector<T>& v, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected an array");
    v.assign(j.size(), T{});
    for (std::size_t i = 0; i < j.size(); ++i) read(j[i], v[i], path + "[" + std::to_string(i) + "]");
  }
  static void read(const Json& j, SynthConfig& v, const std::string& path);

  const Json& j_;
  std::string prefix_;
  std::set<std::string> known_;
};

class ConfigWriter {
 public:
  template <class T>
  void operator()(const char* key, const T& value) {
    j[key] = write(value);
  }
  Json j = Json::object();

 private:
  template <class T>
  static Json write(const T& v) {
    return Json(v);
  }
  static Json write(const std::filesystem::path& v) { return v.string(); }
  static Json write(const SynthConfig& v);
};

template <class C, class F>
void synth_fields(C& c, F&& f) {
  f("n", c.n);
  f("p", c.p);
  f("l1", c.l1);
  f("l2", c.l2);
  f("sigma", c.sigma);
  f("n_train", c.n_train);
  f("n_test", c.n_test);
  f("seed", c.seed);
}

void ConfigReader::read(const Json& j, SynthConfig& v, const std::string& path) {
  ConfigReader r(j, path + ".");
  synth_fields(v, r);
  r.finish();
}

Json ConfigWriter::write(const SynthConfig& v) {
  ConfigWriter w;
  synth_fields(v, w);
  return w.j;
}

template <class C, class F>
void fields(C& c, F&& f)
  requires std::is_same_v<std::remove_const_t<C>, SynthStabilityConfig>
{
  f("data", c.data);
  f("degree", c.degree);
  f("hidden", c.hidden);
  f("epochs_one_layer", c.epochs_one_layer);
  f("epochs_two_layer", c.epochs_two_layer);
  f("learning_rate", c.learning_rate);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("lambda", c.lambda);
  f("init_scale", c.init_scale);
  f("stable_init_scale", c.stable_init_scale);
  f("seed", c.seed);
  f("monitor_every", c.monitor_every);
  f("history_perturbation", c.history_perturbation);
  f("sweep_sizes", c.sweep_sizes);
  f("sweep_trials", c.sweep_trials);
  f("sweep_inputs", c.sweep_inputs);
}

template <class C, class F>
void fields(C& c, F&& f)
  requires std::is_same_v<std::remove_const_t<C>, TransferSweepConfig>
{
  f("data", c.data);
  f("sizes", c.sizes);
  f("degree", c.degree);
  f("epochs", c.epochs);
  f("learning_rate", c.learning_rate);
  f("init_scale", c.init_scale);
  f("seed", c.seed);
  f("stable", c.stable);
  f("lambda", c.lambda);
}

template <class C, class F>
void fields(C& c, F&& f)
  requires std::is_same_v<std::remove_const_t<C>, MovieLensConfig>
{
  f("ratings", c.ratings);
  f("knn", c.knn);
  f("min_overlap", c.min_overlap);
  f("multi_degree", c.multi_degree);
  f("single_degree", c.single_degree);
  f("observed_fraction", c.observed_fraction);
  f("train_fraction", c.train_fraction);
  f("iterations", c.iterations);
  f("learning_rate", c.learning_rate);
  f("init_scale", c.init_scale);
  f("ridges", c.ridges);
  f("seed", c.seed);
}

template <class C, class F>
void fields(C& c, F&& f)
  requires std::is_same_v<std::remove_const_t<C>, GraphonSampleConfig>
{
  f("graphon", c.graphon);
  f("graphon_file", c.graphon_file);
  f("sizes", c.sizes);
  f("seeds", c.seeds);
  f("seed", c.seed);
  f("save_graphs", c.save_graphs);
}

template <class C, class F>
void fields(C& c, F&& f)
  requires std::is_same_v<std::remove_const_t<C>, BoundsReportConfig>
{
  f("model", c.model);
  f("graphs", c.graphs);
  f("signal", c.signal);
  f("signal_count", c.signal_count);
  f("perturbation", c.perturbation);
  f("seed", c.seed);
}

template <class C>
C read_config(const Json& j) {
  C c;
  ConfigReader r(j, "");
  fields(c, r);
  r.finish();
  return c;
}

template <class C>
Json write_config(const C& c) {
  ConfigWriter w;
  fields(c, w);
  return w.j;
}

// ---- shared helpers --------------------------------------------------------

std::ofstream open_csv(OutputDir& dir, const std::string& kind) {
  std::ofstream out(dir.file(kind + ".csv"));
  if (!out) throw DataError("cannot write " + kind + ".csv");
  return out;
}

Json constants_json(const ExpansionVectors& v) { return {{"c_total", v.c_total}, {"c_per_var", v.c_per_var}}; }

ExpansionVectors halved(const ExpansionVectors& v) {
  ExpansionVectors h = v;
  for (double& c : h.c_total) c /= 2.0;
  for (auto& row : h.c_per_var)
    for (double& c : row) c /= 2.0;
  return h;
}

TrainConfig with_targets(TrainConfig tc, double lambda, const ExpansionVectors& targets) {
  tc.lambda = lambda;
  tc.c_total_targets = targets.c_total;
  tc.c_per_var_targets = targets.c_per_var;
  return tc;
}

void write_constants(CsvWriter& csv, const std::string& model, const TrainHistory& history) {
  for (const auto& rec : history)
    for (std::size_t l = 0; l < rec.constants.c_total.size(); ++l) {
      csv.cell(model).cell(rec.epoch).cell(static_cast<int>(l + 1)).cell(0).cell(rec.constants.c_total[l]).end_row();
      for (std::size_t j = 0; j < rec.constants.c_per_var.size(); ++j)
        csv.cell(model)
            .cell(rec.epoch)
            .cell(static_cast<int>(l + 1))
            .cell(static_cast<int>(j + 1))
            .cell(rec.constants.c_per_var[j][l])
            .end_row();
    }
}

std::pair<double, int> best_test(const TrainHistory& h) {
  double best = std::numeric_limits<double>::infinity();
  int at = 0;
  for (const auto& r : h)
    if (r.test_mse && *r.test_mse < best) {
      best = *r.test_mse;
      at = r.epoch;
    }
  return {best, at};
}

std::string knn_name(int k) { return "k" + std::to_string(k); }

}  // namespace

// ---- schemas and output directory -----------------------------------------

const std::vector<std::string>& csv_schema(const std::string& kind) {
  static const std::map<std::string, std::vector<std::string>> schemas{
      {"history", {"model", "epoch", "train_loss", "penalty", "test_mse", "test_r2"}},
      {"constants", {"model", "epoch", "layer", "variable", "value"}},
      {"stability", {"model", "epoch", "layer", "filter_op", "c_total", "diff_op", "diff_entry_bound",
                     "diff_block_bound"}},
      {"sweep", {"model", "size", "mean_opdist", "empirical", "bound", "filter_diff_op", "filter_diff_entry_bound",
                 "filter_diff_block_bound"}},
      {"transfer", {"model", "m", "epoch", "train_loss", "test_mse"}},
      {"op_dist", {"m", "variable", "op_dist"}},
      {"movielens", {"model", "ridge", "iteration", "train_loss", "test_mse"}},
      {"convergence", {"n", "template_hs", "er_op_mean", "er_op_sd", "er_hs_mean", "er_hs_sd", "er_hs_min"}},
      {"report", {"signal", "empirical", "bound", "constant_bound", "simplified_bound", "operator_bound",
                  "input_min_norm", "max_op_distance"}},
  };
  auto it = schemas.find(kind);
  if (it == schemas.end()) throw PreconditionError("unknown csv kind " + kind);
  return it->second;
}

OutputDir::OutputDir(std::filesystem::path out) : out_(std::move(out)) {
  if (out_.empty()) throw ConfigError("output directory is empty");
  staging_ = out_;
  staging_ += ".partial";
  std::error_code ec;
  std::filesystem::remove_all(staging_, ec);
  std::filesystem::create_directories(staging_, ec);
  if (ec) throw DataError("cannot create " + staging_.string() + ": " + ec.message());
}

OutputDir::~OutputDir() = default;

std::filesystem::path OutputDir::file(const std::string& name) {
  if (committed_) throw PreconditionError("output directory already committed");
  const std::filesystem::path rel(name);
  if (rel.is_absolute() || name.find("..") != std::string::npos) throw PreconditionError("bad artifact name " + name);
  const auto p = staging_ / rel;
  std::filesystem::create_directories(p.parent_path());
  if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
  return p;
}

void OutputDir::commit(const std::string& experiment, const Json& resolved_config) {
  Json artifacts = Json::array();
  for (const auto& f : files_) {
    const auto p = staging_ / f;
    artifacts.push_back({{"file", f}, {"bytes", std::filesystem::file_size(p)}, {"fnv1a64", file_hash(p)}});
  }
  Json manifest{{"experiment", experiment},
                {"format", "gtnn.manifest"},
                {"version", kFileFormatVersion},
                {"csv_schema_version", kCsvSchemaVersion},
                {"config", resolved_config},
                {"artifacts", artifacts}};
  write_json(staging_ / "manifest.json", manifest);
  std::error_code ec;
  std::filesystem::remove_all(out_, ec);
  std::filesystem::rename(staging_, out_, ec);
  if (ec) throw DataError("cannot move results to " + out_.string() + ": " + ec.message());
  committed_ = true;
}

// ---- configs ---------------------------------------------------------------

SynthStabilityConfig synth_stability_config(const Json& j) { return read_config<SynthStabilityConfig>(j); }
TransferSweepConfig transfer_sweep_config(const Json& j) { return read_config<TransferSweepConfig>(j); }
MovieLensConfig movielens_config(const Json& j) { return read_config<MovieLensConfig>(j); }
GraphonSampleConfig graphon_sample_config(const Json& j) { return read_config<GraphonSampleConfig>(j); }
BoundsReportConfig bounds_report_config(const Json& j) { return read_config<BoundsReportConfig>(j); }

Json to_json(const SynthStabilityConfig& c) { return write_config(c); }
Json to_json(const TransferSweepConfig& c) { return write_config(c); }
Json to_json(const MovieLensConfig& c) { return write_config(c); }
Json to_json(const GraphonSampleConfig& c) { return write_config(c); }
Json to_json(const BoundsReportConfig& c) { return write_config(c); }

// ---- synthetic stability ---------------------------------------------------

SynthStabilityResult run_synth_stability(const SynthStabilityConfig& c, const std::filesystem::path& out) {
  const auto start = Clock::now();
  if (c.monitor_every < 0 || c.sweep_trials < 1 || c.sweep_inputs < 1) throw ConfigError("invalid sweep settings");
  OutputDir dir(out);
  const SynthData synth = synth_circulant_dataset(c.data);
  const OperatorTuple& t = synth.tuple;
  const OperatorTuple z = gaussian_perturbation(t, c.history_perturbation, c.seed ^ 0xa5a5a5a5ULL);

  auto history_file = open_csv(dir, "history");
  auto constants_file = open_csv(dir, "constants");
  auto stability_file = open_csv(dir, "stability");
  CsvWriter history(history_file, csv_schema("history"));
  CsvWriter constants(constants_file, csv_schema("constants"));
  CsvWriter stability(stability_file, csv_schema("stability"));

  TrainConfig base;
  base.learning_rate = c.learning_rate;
  base.beta1 = c.beta1;
  base.beta2 = c.beta2;
  base.seed = c.seed;
  base.init_scale = c.init_scale;

  SynthStabilityResult result;
  auto fit = [&](const std::string& name, const NetworkShape& shape, int epochs,
                 const std::optional<ExpansionVectors>& targets) {
    TrainConfig tc = targets ? with_targets(base, c.lambda, *targets) : base;
    tc.epochs = epochs;
    TrainOptions opt;
    opt.test_samples = &synth.data.test;
    opt.monitor_every = c.monitor_every;
    opt.monitor = [&](int epoch, const NetworkSpec& net) {
      const auto metrics = filter_metrics(net, t, z);
      for (std::size_t l = 0; l < metrics.size(); ++l) {
        const auto& m = metrics[l];
        stability.cell(name).cell(epoch).cell(static_cast<int>(l + 1)).cell(m.filter_op).cell(m.c_total);
        stability.cell(m.diff_op).cell(m.diff_entry_bound).cell(m.diff_block_bound).end_row();
      }
    };
    const double scale = targets ? c.stable_init_scale : c.init_scale;
    auto trained = train(init_network(shape, scale, c.seed), t, synth.data.train, tc, opt);
    for (const auto& r : trained.history) {
      history.cell(name).cell(r.epoch).cell(r.train_loss).cell(r.penalty);
      history.cell(r.test_mse.value_or(NAN)).cell(r.test_r2.value_or(NAN)).end_row();
    }
    write_constants(constants, name, trained.history);
    BatchObjective test(trained.net, t, synth.data.test);
    TrainedModel m{name, trained.net, test.r_squared(trained.net.coefficients()), expansion_vectors(trained.net),
                   targets};
    write_json(dir.file("model_" + name + ".json"), network_to_json(m.net));
    result.models.push_back(std::move(m));
    return result.models.back().constants;
  };

  const NetworkShape one{2, c.degree, {1, 1}, {}, {}};
  const NetworkShape two{2, c.degree, {1, c.hidden, 1}, {}, {}};
  const auto c1 = fit("one_layer", one, c.epochs_one_layer, std::nullopt);
  fit("one_layer_stable", one, c.epochs_one_layer, halved(c1));
  const auto c2 = fit("two_layer", two, c.epochs_two_layer, std::nullopt);
  fit("two_layer_stable", two, c.epochs_two_layer, halved(c2));

  std::vector<NamedNetwork> nets;
  for (const auto& m : result.models) nets.push_back({m.name, m.net});
  std::vector<MultiSignal> inputs;
  for (std::size_t i = 0; i < synth.data.test.size() && inputs.size() < static_cast<std::size_t>(c.sweep_inputs); ++i)
    inputs.push_back(synth.data.test[i].input);
  result.sweep = perturb_sweep(nets, t, inputs, c.sweep_sizes, c.sweep_trials, c.seed ^ 0x5eedf00dULL);
  {
    auto f = open_csv(dir, "sweep");
    CsvWriter sweep(f, csv_schema("sweep"));
    for (const auto& r : result.sweep) {
      sweep.cell(r.model).cell(r.size).cell(r.mean_opdist).cell(r.empirical).cell(r.bound);
      sweep.cell(r.filter_diff_op).cell(r.filter_diff_entry_bound).cell(r.filter_diff_block_bound).end_row();
    }
  }
  write_json(dir.file("graphs.json"), graphs_to_json(t.operators()));

  Json summary = Json::array();
  for (const auto& m : result.models) {
    Json e{{"model", m.name},
           {"parameters", m.net.parameter_count()},
           {"test_r2", m.test_r2},
           {"constants", constants_json(m.constants)}};
    if (m.targets) e["targets"] = constants_json(*m.targets);
    summary.push_back(e);
  }
  result.seconds = seconds_since(start);
  write_json(dir.file("summary.json"), {{"models", summary}, {"seconds", result.seconds}});
  history_file.close();
  constants_file.close();
  stability_file.close();
  dir.commit("synth-stability", to_json(c));
  return result;
}

// ---- transferability -------------------------------------------------------

TransferSweepResult run_transfer_sweep(const TransferSweepConfig& c, const std::filesystem::path& out) {
  const auto start = Clock::now();
  OutputDir dir(out);
  const SynthData synth = synth_circulant_dataset(c.data);
  auto transfer_file = open_csv(dir, "transfer");
  auto opdist_file = open_csv(dir, "op_dist");
  CsvWriter transfer(transfer_file, csv_schema("transfer"));
  CsvWriter opdist(opdist_file, csv_schema("op_dist"));

  TrainConfig base;
  base.learning_rate = c.learning_rate;
  base.epochs = c.epochs;
  base.seed = c.seed;
  base.init_scale = c.init_scale;
  const NetworkShape shape{2, c.degree, {1, 1}, {}, {}};
  TrainOptions opt;
  opt.test_tuple = &synth.tuple;
  opt.test_samples = &synth.data.test;

  TransferSweepResult result;
  for (int m : c.sizes) {
    const auto ds = downsample_experiment(synth.tuple.operators(), synth.data.train, m);
    for (std::size_t j = 0; j < ds.op_distance.size(); ++j)
      opdist.cell(m).cell(static_cast<int>(j + 1)).cell(ds.op_distance[j]).end_row();
    auto fit = [&](const std::string& name, const TrainConfig& tc) {
      auto trained = train(init_network(shape, c.init_scale, c.seed), ds.tuple, ds.train, tc, opt);
      for (const auto& r : trained.history)
        transfer.cell(name).cell(m).cell(r.epoch).cell(r.train_loss).cell(r.test_mse.value_or(NAN)).end_row();
      const auto [best, at] = best_test(trained.history);
      result.rows.push_back({name, m, ds.op_distance, best, at});
      return expansion_vectors(trained.net);
    };
    const auto constants = fit("gtnn", base);
    if (c.stable) fit("stable_gtnn", with_targets(base, c.lambda, halved(constants)));
  }

  Json summary = Json::array();
  for (const auto& r : result.rows)
    summary.push_back({{"model", r.model},
                       {"m", r.m},
                       {"op_dist", r.op_distance},
                       {"best_test_mse", r.best_test_mse},
                       {"best_epoch", r.best_epoch}});
  result.seconds = seconds_since(start);
  write_json(dir.file("summary.json"), {{"runs", summary}, {"seconds", result.seconds}});
  transfer_file.close();
  opdist_file.close();
  dir.commit("transfer-sweep", to_json(c));
  return result;
}

// ---- movie recommendation --------------------------------------------------

MovieLensResult run_movielens(const MovieLensConfig& c, const std::filesystem::path& out, const RatingsTable* table) {
  const auto start = Clock::now();
  if (c.knn.empty()) throw ConfigError("knn: expected at least one value");
  if (c.iterations < 1) throw ConfigError("iterations: expected a positive count");
  RatingsTable loaded;
  if (!table) {
    if (c.ratings.empty()) throw ConfigError("ratings: path to the ratings file is required");
    loaded = load_movielens(c.ratings);
    table = &loaded;
  }
  OutputDir dir(out);
  MovieLensResult result;
  result.users = table->users();
  result.items = table->items();
  result.ratings = table->size();

  std::vector<SymOperator> graphs;
  for (int k : c.knn) {
    auto g = correlation_graph(*table, k, c.min_overlap);
    result.isolated.push_back(g.isolated);
    graphs.push_back(std::move(g.shift));
  }
  write_json(dir.file("graphs.json"), graphs_to_json(graphs));
  const auto samples = movie_samples(center_ratings(*table), {c.observed_fraction, c.train_fraction, c.seed});
  if (samples.data.train.empty() || samples.data.test.empty())
    throw DataError("too few rated items for a train/test split");

  auto csv_file = open_csv(dir, "movielens");
  CsvWriter csv(csv_file, csv_schema("movielens"));
  TrainConfig base;
  base.learning_rate = c.learning_rate;
  base.epochs = c.iterations;
  base.seed = c.seed;
  base.init_scale = c.init_scale;

  const OperatorTuple multi(graphs);
  std::vector<std::pair<std::string, OperatorTuple>> singles;
  for (std::size_t i = 0; i < graphs.size(); ++i)
    singles.emplace_back("gnn_" + knn_name(c.knn[i]), OperatorTuple({graphs[i]}));
  const std::string multi_name = graphs.size() == 2 ? "2onn" : "gtnn";

  auto fit = [&](const std::string& name, const OperatorTuple& t, const NetworkShape& shape, double ridge) {
    TrainConfig tc = base;
    tc.ridge = ridge;
    TrainOptions opt;
    opt.test_samples = &samples.data.test;
    auto trained = train(init_network(shape, c.init_scale, c.seed), t, samples.data.train, tc, opt);
    for (const auto& r : trained.history)
      csv.cell(name).cell(ridge).cell(r.epoch).cell(r.train_loss).cell(r.test_mse.value_or(NAN)).end_row();
    const auto [best, at] = best_test(trained.history);
    return std::pair{trained.history, MovieLensModelResult{name, ridge, best, at}};
  };

  const NetworkShape multi_shape{multi.arity(), c.multi_degree, {1, 1}, {}, {}};
  const NetworkShape single_shape{1, c.single_degree, {1, 1}, {}, {}};
  result.best_multi = result.best_single = std::numeric_limits<double>::infinity();
  std::optional<TrainHistory> single_plain;
  for (double ridge : c.ridges) {
    auto [h, r] = fit(multi_name, multi, multi_shape, ridge);
    result.best_multi = std::min(result.best_multi, r.best_test_mse);
    result.models.push_back(r);
    for (std::size_t i = 0; i < singles.size(); ++i) {
      auto [hs, rs] = fit(singles[i].first, singles[i].second, single_shape, ridge);
      result.best_single = std::min(result.best_single, rs.best_test_mse);
      result.models.push_back(rs);
      if (i == 0 && ridge == 0.0) single_plain = std::move(hs);
    }
  }

  // The graph-tuple model restricted to words in the first variable.
  std::vector<Word> one_var;
  for (const auto& w : enumerate_basis(1, c.single_degree)) one_var.push_back(w);
  NetworkShape embedded = single_shape;
  embedded.arity = multi.arity();
  embedded.support = one_var;
  if (!single_plain) single_plain = fit(singles[0].first, singles[0].second, single_shape, 0.0).first;
  auto [he, re] = fit(multi_name + "_one_variable", multi, embedded, 0.0);
  for (std::size_t i = 0; i < he.size(); ++i) {
    result.embedding_gap = std::max(result.embedding_gap, std::abs(he[i].train_loss - (*single_plain)[i].train_loss));
    result.embedding_gap = std::max(result.embedding_gap, std::abs(*he[i].test_mse - *(*single_plain)[i].test_mse));
  }

  Json models = Json::array();
  for (const auto& m : result.models)
    models.push_back({{"model", m.model},
                      {"ridge", m.ridge},
                      {"best_test_mse", m.best_test_mse},
                      {"best_iteration", m.best_iteration}});
  result.seconds = seconds_since(start);
  write_json(dir.file("summary.json"), {{"users", result.users},
                                        {"items", result.items},
                                        {"ratings", result.ratings},
                                        {"isolated_users", result.isolated},
                                        {"train_items", samples.data.train.size()},
                                        {"test_items", samples.data.test.size()},
                                        {"dropped_items", samples.dropped},
                                        {"models", models},
                                        {"best_multi", result.best_multi},
                                        {"best_single", result.best_single},
                                        {"multi_beats_single", result.best_multi <= result.best_single},
                                        {"embedding_gap", result.embedding_gap},
                                        {"seconds", result.seconds}});
  csv_file.close();
  dir.commit("movielens", to_json(c));
  return result;
}

// ---- graphon sampling ------------------------------------------------------

std::vector<GraphonSampleRow> run_graphon_sample(const GraphonSampleConfig& c, const std::filesystem::path& out) {
  if (c.seeds < 1) throw ConfigError("seeds: expected a positive count");
  for (int n : c.sizes)
    if (n < 1) throw ConfigError("sizes: expected positive sizes");
  std::optional<PiecewiseGraphon> piecewise;
  std::optional<AnalyticGraphon> analytic;
  if (!c.graphon_file.empty()) {
    piecewise = graphon_from_json(read_json(c.graphon_file));
  } else {
    analytic = named_graphon(c.graphon);
    if (c.graphon.rfind("constant:", 0) == 0) {
      piecewise = PiecewiseGraphon::constant(1, (*analytic)(0.5, 0.5));
      analytic.reset();
    }
  }
  OutputDir dir(out);
  auto csv_file = open_csv(dir, "convergence");
  CsvWriter csv(csv_file, csv_schema("convergence"));

  auto distances = [&](const SymOperator& g) -> std::pair<double, double> {
    const auto wg = induced_graphon(g);
    if (piecewise) return {op_dist(*piecewise, wg), hs_dist(*piecewise, wg)};
    return {op_dist(*analytic, wg), hs_dist(*analytic, wg)};
  };

  std::vector<GraphonSampleRow> rows;
  for (int n : c.sizes) {
    GraphonSampleRow row;
    row.n = n;
    const SymOperator tmpl = piecewise ? template_graph(*piecewise, n) : template_graph(*analytic, n);
    row.template_hs = distances(tmpl).second;
    std::vector<double> ops(static_cast<std::size_t>(c.seeds)), hss(ops.size());
    std::optional<SymOperator> first;
    parallel_for(ops.size(), [&](std::size_t s) {
      const std::uint64_t seed = c.seed + s;
      const SymOperator g = piecewise ? graphon_er(*piecewise, n, seed) : graphon_er(*analytic, n, seed);
      std::tie(ops[s], hss[s]) = distances(g);
      if (s == 0) first = g;
    });
    auto stats = [](const std::vector<double>& v) {
      double mean = 0.0, ss = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      for (double x : v) ss += (x - mean) * (x - mean);
      return std::pair{mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
    };
    std::tie(row.er_op_mean, row.er_op_sd) = stats(ops);
    std::tie(row.er_hs_mean, row.er_hs_sd) = stats(hss);
    row.er_hs_min = *std::min_element(hss.begin(), hss.end());
    csv.cell(n).cell(row.template_hs).cell(row.er_op_mean).cell(row.er_op_sd);
    csv.cell(row.er_hs_mean).cell(row.er_hs_sd).cell(row.er_hs_min).end_row();
    if (c.save_graphs) {
      const std::string suffix = "_n" + std::to_string(n) + ".json";
      write_json(dir.file("graphs/template" + suffix), graphs_to_json(std::span(&tmpl, 1)));
      write_json(dir.file("graphs/er_seed" + std::to_string(c.seed) + suffix), graphs_to_json(std::span(&*first, 1)));
    }
    rows.push_back(row);
  }
  csv_file.close();
  dir.commit("graphon-sample", to_json(c));
  return rows;
}

// ---- bounds report ---------------------------------------------------------

std::vector<PerturbationReport> run_bounds_report(const BoundsReportConfig& c, const std::filesystem::path& out) {
  if (c.model.empty() || c.graphs.empty()) throw ConfigError("model and graphs paths are required");
  if (c.perturbation < 0.0) throw ConfigError("perturbation: expected a nonnegative size");
  const NetworkSpec net = network_from_json(read_json(c.model));
  const auto graphs = graphs_from_json(read_json(c.graphs));
  if (static_cast<int>(graphs.size()) != net.arity())
    throw DataError("graphs: expected " + std::to_string(net.arity()) + " operators for the model");
  const OperatorTuple t(graphs);
  if (!t.nonexpansive_certified()) throw DataError("graphs: operators are not nonexpansive");
  const OperatorTuple u = gaussian_perturbation(t, c.perturbation, c.seed);
  const int in = net.feature_sizes().front();

  std::vector<MultiSignal> signals;
  if (!c.signal.empty()) {
    signals.push_back(signal_from_json(read_json(c.signal)));
    if (signals[0].dim() != t.dim() || signals[0].features() != in)
      throw DataError("signal: shape does not match the model and graphs");
  } else {
    if (c.signal_count < 1) throw ConfigError("signal_count: expected a positive count");
    std::mt19937_64 rng(c.seed ^ 0x51a1ULL);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int s = 0; s < c.signal_count; ++s) {
      Matrix x(t.dim(), in);
      for (int a = 0; a < in; ++a)
        for (int i = 0; i < t.dim(); ++i) x(i, a) = u01(rng);
      signals.emplace_back(std::move(x), 1.0);
    }
  }

  OutputDir dir(out);
  auto csv_file = open_csv(dir, "report");
  CsvWriter csv(csv_file, csv_schema("report"));
  std::vector<PerturbationReport> reports;
  Json all = Json::array();
  for (std::size_t s = 0; s < signals.size(); ++s) {
    auto r = network_bound(net, t, u, signals[s], signals[s]);
    if (r.empirical > r.bound * (1.0 + 1e-9) + 1e-12)
      throw NumericError("bound violated for signal " + std::to_string(s) + ": " + format_double(r.empirical) +
                         " > " + format_double(r.bound));
    const double max_op = r.op_distance.empty() ? 0.0 : *std::max_element(r.op_distance.begin(), r.op_distance.end());
    csv.cell(static_cast<int>(s)).cell(r.empirical).cell(r.bound).cell(r.constant_bound);
    csv.cell(r.simplified_bound.value_or(NAN)).cell(r.operator_bound).cell(r.input_min_norm).cell(max_op).end_row();
    Json layers = Json::array();
    for (const auto& l : r.layers) layers.push_back({{"signal_term", l.signal_term}, {"operator_term", l.operator_term}});
    Json e{{"signal", s},
           {"empirical", r.empirical},
           {"bound", r.bound},
           {"constant_bound", r.constant_bound},
           {"operator_bound", r.operator_bound},
           {"input_distance", r.input_distance},
           {"input_min_norm", r.input_min_norm},
           {"op_distance", r.op_distance},
           {"layers", layers}};
    e["simplified_bound"] = r.simplified_bound ? Json(*r.simplified_bound) : Json(nullptr);
    all.push_back(e);
    reports.push_back(std::move(r));
  }
  write_json(dir.file("report.json"), {{"reports", all}});
  csv_file.close();
  dir.commit("bounds-report", to_json(c));
  return reports;
}

}  // namespace gtnn
