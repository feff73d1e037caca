// gtnn: command-line front end for the experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "gtnn/error.hpp"
#include "gtnn/experiments.hpp"
#include "gtnn/io.hpp"
#include "gtnn/runtime.hpp"
#include "plot.hpp"

namespace {

using namespace gtnn;

enum ExitCode { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

Json load_config(const Common& c) {
  if (c.config.empty()) return Json::object();
  try {
    return read_json(c.config);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

std::string out_dir(const Common& c, const char* name) { return c.out.empty() ? std::string("results/") + name : c.out; }

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Output directory (default results/<command>)");
  sub->add_option("--seed", c.seed, "Overrides the config seed");
}

void print_models(const SynthStabilityResult& r) {
  for (const auto& m : r.models) {
    std::printf("%-18s R2 %.4f  C", m.name.c_str(), m.test_r2);
    for (double c : m.constants.c_total) std::printf(" %.4f", c);
    std::printf("\n");
  }
  std::printf("finished in %.1f s\n", r.seconds);
}

}  // namespace

int main(int argc, char** argv) {
  gtnn::tune_allocator();
  CLI::App app{"Graph-tuple neural network experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common synth, transfer, movie, graphon, bounds;
  auto* synth_cmd = app.add_subcommand("synth-stability", "Train the four circulant-graph models and sweep perturbations");
  add_common(synth_cmd, synth);
  auto* transfer_cmd = app.add_subcommand("transfer-sweep", "Train on down-sampled graphs, test on the full graphs");
  add_common(transfer_cmd, transfer);
  auto* movie_cmd = app.add_subcommand("movielens", "Rating interpolation on user correlation graphs");
  add_common(movie_cmd, movie);
  std::string ratings;
  movie_cmd->add_option("--ratings", ratings, "Ratings file (tab-separated user, item, rating, timestamp)");
  auto* graphon_cmd = app.add_subcommand("graphon-sample", "Template and random graphs from a graphon");
  add_common(graphon_cmd, graphon);
  std::string graphon_name;
  graphon_cmd->add_option("--graphon", graphon_name, "Named graphon: product, min, constant:<p>, exp:<c>");
  auto* bounds_cmd = app.add_subcommand("bounds-report", "Perturbation bounds for a saved model and graphs");
  add_common(bounds_cmd, bounds);
  std::string model_path, graphs_path;
  std::optional<double> perturbation;
  bounds_cmd->add_option("--model", model_path, "Network JSON");
  bounds_cmd->add_option("--graphs", graphs_path, "Graph tuple JSON");
  bounds_cmd->add_option("--perturbation", perturbation, "Gaussian perturbation size");

  tools::PlotOptions plot;
  auto* plot_cmd = app.add_subcommand("plot", "Line plot of two CSV columns as SVG");
  plot_cmd->add_option("--csv", plot.csv, "Input CSV")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--x", plot.x, "Column for the horizontal axis")->required();
  plot_cmd->add_option("--y", plot.y, "Column for the vertical axis")->required();
  plot_cmd->add_option("--group", plot.group, "Column naming the series");
  plot_cmd->add_flag("--log-y", plot.log_y, "Logarithmic vertical axis");
  plot_cmd->add_option("--out", plot.out, "Output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth_cmd) {
      auto c = synth_stability_config(load_config(synth));
      if (synth.seed) c.seed = c.data.seed = *synth.seed;
      print_models(run_synth_stability(c, out_dir(synth, "synth-stability")));
    } else if (*transfer_cmd) {
      auto c = transfer_sweep_config(load_config(transfer));
      if (transfer.seed) c.seed = c.data.seed = *transfer.seed;
      const auto r = run_transfer_sweep(c, out_dir(transfer, "transfer-sweep"));
      for (const auto& row : r.rows) {
        std::printf("%-12s m=%-4d best test MSE %.6f (epoch %d)  op_dist", row.model.c_str(), row.m,
                    row.best_test_mse, row.best_epoch);
        for (double d : row.op_distance) std::printf(" %.6g", d);
        std::printf("\n");
      }
      std::printf("finished in %.1f s\n", r.seconds);
    } else if (*movie_cmd) {
      auto c = movielens_config(load_config(movie));
      if (movie.seed) c.seed = *movie.seed;
      if (!ratings.empty()) c.ratings = ratings;
      const auto r = run_movielens(c, out_dir(movie, "movielens"));
      std::printf("%d users, %d items, %zu ratings\n", r.users, r.items, r.ratings);
      for (const auto& m : r.models)
        std::printf("%-10s ridge %-8g best test MSE %.6f (iteration %d)\n", m.model.c_str(), m.ridge,
                    m.best_test_mse, m.best_iteration);
      std::printf("best graph-tuple %.6f, best single graph %.6f, embedding gap %g\n", r.best_multi, r.best_single,
                  r.embedding_gap);
    } else if (*graphon_cmd) {
      auto c = graphon_sample_config(load_config(graphon));
      if (graphon.seed) c.seed = *graphon.seed;
      if (!graphon_name.empty()) c.graphon = graphon_name;
      std::printf("%6s %12s %12s %12s %12s %12s\n", "n", "template_hs", "er_op_mean", "er_op_sd", "er_hs_mean",
                  "er_hs_sd");
      for (const auto& r : run_graphon_sample(c, out_dir(graphon, "graphon-sample")))
        std::printf("%6d %12.6f %12.6f %12.6f %12.6f %12.6f\n", r.n, r.template_hs, r.er_op_mean, r.er_op_sd,
                    r.er_hs_mean, r.er_hs_sd);
    } else if (*bounds_cmd) {
      auto c = bounds_report_config(load_config(bounds));
      if (bounds.seed) c.seed = *bounds.seed;
      if (!model_path.empty()) c.model = model_path;
      if (!graphs_path.empty()) c.graphs = graphs_path;
      if (perturbation) c.perturbation = *perturbation;
      const auto reports = run_bounds_report(c, out_dir(bounds, "bounds-report"));
      for (std::size_t s = 0; s < reports.size(); ++s)
        std::printf("signal %zu: empirical %.6g <= bound %.6g\n", s, reports[s].empirical, reports[s].bound);
    } else if (*plot_cmd) {
      tools::plot_csv(plot);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
  return kOk;
}
