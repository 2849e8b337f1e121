// Command-line front end: run, grid, sweep, make-synthetic, inspect, keys.
//
// Configuration precedence (lowest to highest): built-in defaults,
// RAEUFS_OUTPUT_DIR (output directory only), --config file, --set
// overrides, dedicated flags (--data, --output, --seed, --workers, --baseline).

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "raeufs/experiment.hpp"

namespace {

struct CommonOptions {
  std::vector<std::string> configs;
  std::vector<std::string> overrides;
  std::string data;
  std::string output;
  std::string seed;
  std::string workers;
  bool baseline = false;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.configs, "key = value config file (repeatable)");
  app->add_option("-s,--set", o.overrides, "override, key=value (repeatable)");
  app->add_option("-d,--data", o.data, "dataset path (data.path)");
  app->add_option("-o,--output", o.output, "output directory (output_dir)");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("-j,--workers", o.workers, "concurrent fits");
  app->add_flag("--baseline", o.baseline, "also evaluate k-means on the unreduced data");
}

raeufs::ExperimentConfig build_config(const CommonOptions& o) {
  raeufs::ExperimentConfig c;
  for (const auto& f : o.configs) raeufs::apply_config_file(c, f);
  for (const auto& kv : o.overrides) raeufs::apply_override(c, kv);
  if (!o.data.empty()) raeufs::set_config_value(c, "data.path", o.data);
  if (!o.output.empty()) raeufs::set_config_value(c, "output_dir", o.output);
  if (!o.seed.empty()) raeufs::set_config_value(c, "seed", o.seed);
  if (!o.workers.empty()) raeufs::set_config_value(c, "workers", o.workers);
  if (o.baseline) c.baseline = true;
  return c;
}

void print_report(const std::string& label, const raeufs::MetricReport& r) {
  std::printf("%-9s ACC %.4f (%.4f)  NMI %.4f (%.4f)  [%d repetitions]\n", label.c_str(),
              r.acc_mean, r.acc_std, r.nmi_mean, r.nmi_std, r.repetitions);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust autoencoder unsupervised feature selection"};
  app.require_subcommand(1);

  CommonOptions run_opt, grid_opt, sweep_opt;
  auto* run = app.add_subcommand("run", "scale, contaminate, fit, reduce and evaluate");
  add_common(run, run_opt);
  auto* grid = app.add_subcommand("grid", "hyperparameter grid search");
  add_common(grid, grid_opt);
  auto* sweep = app.add_subcommand("sweep", "evaluate a list of selected-feature counts");
  add_common(sweep, sweep_opt);

  raeufs::SyntheticSpec spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("make-synthetic", "write a Gaussian-blob dataset");
  synth->add_option("-o,--output", synth_out, "output file (.csv or .bin)")->required();
  synth->add_option("--clusters", spec.clusters, "cluster count")->capture_default_str();
  synth->add_option("--informative", spec.informative, "informative dims")->capture_default_str();
  synth->add_option("--noise", spec.noise, "noise dims")->capture_default_str();
  synth->add_option("--per-cluster", spec.per_cluster, "samples per cluster")->capture_default_str();
  synth->add_option("--separation", spec.separation, "center separation per informative dim")
      ->capture_default_str();
  synth->add_option("--noise-variance", spec.noise_variance, "variance of noise dims")
      ->capture_default_str();
  synth->add_option("--seed", spec.seed, "seed")->capture_default_str();

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "print the manifest of an output directory");
  inspect->add_option("path", inspect_path, "output directory or manifest file")->required();

  auto* keys = app.add_subcommand("keys", "list configuration keys and defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (run->parsed()) {
      const auto c = build_config(run_opt);
      const auto r = raeufs::cmd_run(c);
      if (raeufs::has_scored_rows(r.data)) print_report("raeufs", r.report);
      if (r.baseline) print_report("baseline", *r.baseline);
      std::printf("top features:");
      for (std::size_t i = 0; i < r.ranking.order.size() && i < 10; ++i)
        std::printf(" %lld", static_cast<long long>(r.ranking.order[i]));
      std::printf("\n");
    } else if (grid->parsed()) {
      const auto c = build_config(grid_opt);
      const auto g = raeufs::cmd_grid(c);
      std::printf("%zu cells, best cell %zu (selected by %s)\n", g.cells.size(), g.best,
                  g.by_silhouette ? "silhouette" : "acc");
      if (!g.by_silhouette) print_report("best", g.cells[g.best].report);
      if (g.best_run.baseline) print_report("baseline", *g.best_run.baseline);
    } else if (sweep->parsed()) {
      const auto c = build_config(sweep_opt);
      for (const auto& pt : raeufs::cmd_sweep(c))
        print_report("p=" + std::to_string(pt.p), pt.report);
    } else if (synth->parsed()) {
      const auto d = raeufs::cmd_make_synthetic(spec, synth_out);
      std::printf("wrote %s (%lld x %lld)\n", synth_out.c_str(), static_cast<long long>(d.rows()),
                  static_cast<long long>(d.cols()));
    } else if (inspect->parsed()) {
      std::cout << raeufs::cmd_inspect(inspect_path);
    } else if (keys->parsed()) {
      raeufs::ExperimentConfig c;
      for (const auto& k : raeufs::config_keys(c))
        std::printf("%-28s %-14s %s\n", k.name.c_str(), k.get().c_str(), k.help.c_str());
    }
  } catch (const raeufs::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const raeufs::TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
