#pragma once

// Experiment driver: typed key=value configuration, data preparation,
// run / grid / sweep commands and their CSV reports.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "raeufs/autoencoder.hpp"
#include "raeufs/dataset.hpp"
#include "raeufs/error.hpp"
#include "raeufs/evaluation.hpp"
#include "raeufs/synthetic.hpp"
#include "raeufs/trainer.hpp"

namespace raeufs {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputDirEnv = "RAEUFS_OUTPUT_DIR";

enum class OutlierOrder { kAfterScaling, kBeforeScaling };
enum class Selection { kAuto, kAcc, kSilhouette };

struct ExperimentConfig {
  // dataset
  std::string data_path;
  std::string data_format = "auto";  // auto | csv | binary
  std::string data_name;             // defaults to the file stem
  bool header = true;
  std::string label_column = "last";  // last | none | <0-based index>
  bool scale = true;

  // contamination
  double contamination = 0.0;
  std::optional<std::uint64_t> contamination_seed;  // defaults to seed
  OutlierOrder outlier_order = OutlierOrder::kAfterScaling;

  RaeufsConfig model;

  // evaluation
  ReduceMode mode = ReduceMode::kProject;
  int repetitions = 100;
  std::optional<std::uint64_t> eval_seed;  // defaults to seed
  NmiVariant nmi_variant = NmiVariant::kGeometric;
  KMeansOptions kmeans;
  bool baseline = false;

  // grid / sweep
  std::map<std::string, std::vector<double>> grid;
  Selection selection = Selection::kAuto;
  std::vector<Index> sweep_p;

  std::string output_dir;
  int workers = 1;
  std::uint64_t seed = 0;
  bool save_model = true;

  std::uint64_t resolved_contamination_seed() const { return contamination_seed.value_or(seed); }
  std::uint64_t resolved_eval_seed() const { return eval_seed.value_or(seed); }
  std::string resolved_name() const {
    if (!data_name.empty()) return data_name;
    return data_path.empty() ? "data" : std::filesystem::path(data_path).stem().string();
  }
};

inline constexpr std::array<const char*, 6> kGridParameters = {"alpha",   "beta",    "gamma",
                                                               "eta",     "lambda1", "lambda2"};

// ---------------------------------------------------------------------------
// Typed key registry

namespace detail {

inline std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

inline double to_double(const std::string& key, const std::string& v) {
  const auto d = parse_double(v);
  if (!d) throw ConfigError(key, "expected a number, got '" + v + "'");
  return *d;
}

inline long long to_int(const std::string& key, const std::string& v) {
  const std::string_view t = trim(v);
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const std::string_view t = trim(v);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = lower(std::string(trim(v)));
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) {
    const auto t = trim(cur);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

inline std::string show(double v) { return format_double(v); }
inline std::string show(bool v) { return v ? "true" : "false"; }

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

/// Every documented key bound to the fields of `c`.
inline std::vector<ConfigKey> config_keys(ExperimentConfig& c) {
  using namespace detail;
  std::vector<ConfigKey> k;
  auto add = [&](std::string name, std::string help, std::function<void(const std::string&)> set,
                 std::function<std::string()> get) {
    k.push_back({std::move(name), std::move(help), std::move(set), std::move(get)});
  };
  auto num = [&](const std::string& name, const std::string& help, double& ref) {
    add(name, help, [&ref, name](const std::string& v) { ref = to_double(name, v); },
        [&ref] { return show(ref); });
  };
  auto flag = [&](const std::string& name, const std::string& help, bool& ref) {
    add(name, help, [&ref, name](const std::string& v) { ref = to_bool(name, v); },
        [&ref] { return show(ref); });
  };
  auto integer = [&](const std::string& name, const std::string& help, auto& ref) {
    add(name, help,
        [&ref, name](const std::string& v) {
          ref = static_cast<std::remove_reference_t<decltype(ref)>>(to_int(name, v));
        },
        [&ref] { return std::to_string(ref); });
  };
  auto text = [&](const std::string& name, const std::string& help, std::string& ref) {
    add(name, help, [&ref](const std::string& v) { ref = std::string(trim(v)); },
        [&ref] { return ref; });
  };

  text("data.path", "dataset file (CSV or binary matrix)", c.data_path);
  add("data.format", "auto | csv | binary",
      [&c](const std::string& v) {
        const std::string t = lower(std::string(trim(v)));
        if (t != "auto" && t != "csv" && t != "binary")
          throw ConfigError("data.format", "expected auto, csv or binary");
        c.data_format = t;
      },
      [&c] { return c.data_format; });
  text("data.name", "dataset name used in reports", c.data_name);
  flag("data.header", "CSV has a header row", c.header);
  add("data.label_column", "last | none | 0-based column index",
      [&c](const std::string& v) {
        const std::string t = lower(std::string(trim(v)));
        if (t != "last" && t != "none") to_int("data.label_column", t);
        c.label_column = t;
      },
      [&c] { return c.label_column; });
  flag("data.scale", "min-max scale features to [0,1]", c.scale);

  num("contamination.fraction", "outlier fraction of the total, in [0,1)", c.contamination);
  add("contamination.seed", "outlier RNG seed (default: seed)",
      [&c](const std::string& v) {
        if (trim(v).empty()) c.contamination_seed.reset();
        else c.contamination_seed = to_u64("contamination.seed", v);
      },
      [&c] { return c.contamination_seed ? std::to_string(*c.contamination_seed) : ""; });
  add("contamination.order", "after_scaling | before_scaling",
      [&c](const std::string& v) {
        const std::string t = lower(std::string(trim(v)));
        if (t == "after_scaling") c.outlier_order = OutlierOrder::kAfterScaling;
        else if (t == "before_scaling") c.outlier_order = OutlierOrder::kBeforeScaling;
        else throw ConfigError("contamination.order", "expected after_scaling or before_scaling");
      },
      [&c] {
        return std::string(c.outlier_order == OutlierOrder::kAfterScaling ? "after_scaling"
                                                                          : "before_scaling");
      });

  RaeufsConfig& m = c.model;
  integer("model.p", "number of selected features", m.p);
  integer("model.c", "number of clusters", m.c);
  integer("model.d", "pseudo-label width (0 = c+1)", m.d);
  integer("model.q", "encoder output width (0 = d)", m.q);
  add("model.hidden", "hidden widths, comma separated; 'default' or 'none'",
      [&m](const std::string& v) {
        const std::string t = lower(std::string(trim(v)));
        if (t == "default" || t.empty()) {
          m.hidden.reset();
          return;
        }
        std::vector<Index> widths;
        if (t != "none")
          for (const auto& s : split_list(t)) widths.push_back(to_int("model.hidden", s));
        m.hidden = widths;
      },
      [&m] {
        if (!m.hidden) return std::string("default");
        if (m.hidden->empty()) return std::string("none");
        return join<Index>(*m.hidden, [](const Index& i) { return std::to_string(i); });
      });
  add("model.activation", "identity | leaky_relu | tanh",
      [&m](const std::string& v) {
        try {
          m.activation = activation_from_string(std::string(trim(v)));
        } catch (const Error& e) {
          throw ConfigError("model.activation", e.what());
        }
      },
      [&m] { return std::string(to_string(m.activation)); });
  num("model.alpha", "row-sparsity weight", m.alpha);
  num("model.beta", "affinity entropy weight", m.beta);
  num("model.gamma", "graph smoothness weight", m.gamma);
  num("model.eta", "pseudo-label fit weight", m.eta);
  num("model.lambda1", "subspace residual weight", m.lambda1);
  num("model.lambda2", "subspace orthogonality weight", m.lambda2);
  num("model.eps_smooth", "norm smoothing epsilon", m.eps_smooth);
  integer("model.iterations", "outer iterations", m.iterations);
  integer("model.inner_steps", "Adam steps per block per iteration", m.inner_steps);
  integer("model.batch_size", "minibatch rows (0 = full batch)", m.batch_size);
  num("model.lr", "Adam learning rate", m.adam.lr);
  num("model.adam_beta1", "Adam beta1", m.adam.beta1);
  num("model.adam_beta2", "Adam beta2", m.adam.beta2);
  num("model.adam_eps", "Adam epsilon", m.adam.eps);
  integer("model.gpi_max_iters", "GPI iteration cap", m.gpi_max_iters);
  num("model.gpi_tolerance", "GPI step tolerance (times sqrt(d))", m.gpi_tolerance);
  flag("model.gpi_warm_start", "start GPI from the previous pseudo-labels", m.gpi_warm_start);
  flag("model.early_stop", "stop on small relative objective change", m.early_stop);
  num("model.early_stop_tolerance", "relative change threshold", m.early_stop_tolerance);
  integer("model.early_stop_window", "iterations compared for early stop", m.early_stop_window);

  add("eval.mode", "project | select",
      [&c](const std::string& v) {
        const std::string t = lower(std::string(trim(v)));
        if (t == "project") c.mode = ReduceMode::kProject;
        else if (t == "select") c.mode = ReduceMode::kSelect;
        else throw ConfigError("eval.mode", "expected project or select");
      },
      [&c] { return std::string(to_string(c.mode)); });
  integer("eval.repetitions", "k-means repetitions", c.repetitions);
  add("eval.seed", "k-means seed (default: seed)",
      [&c](const std::string& v) {
        if (trim(v).empty()) c.eval_seed.reset();
        else c.eval_seed = to_u64("eval.seed", v);
      },
      [&c] { return c.eval_seed ? std::to_string(*c.eval_seed) : ""; });
  add("eval.nmi", "geometric | arithmetic",
      [&c](const std::string& v) {
        const std::string t = lower(std::string(trim(v)));
        if (t == "geometric") c.nmi_variant = NmiVariant::kGeometric;
        else if (t == "arithmetic") c.nmi_variant = NmiVariant::kArithmetic;
        else throw ConfigError("eval.nmi", "expected geometric or arithmetic");
      },
      [&c] {
        return std::string(c.nmi_variant == NmiVariant::kGeometric ? "geometric" : "arithmetic");
      });
  add("eval.kmeans_init", "plusplus | random",
      [&c](const std::string& v) {
        const std::string t = lower(std::string(trim(v)));
        if (t == "plusplus") c.kmeans.init = KMeansInit::kPlusPlus;
        else if (t == "random") c.kmeans.init = KMeansInit::kRandom;
        else throw ConfigError("eval.kmeans_init", "expected plusplus or random");
      },
      [&c] { return std::string(c.kmeans.init == KMeansInit::kPlusPlus ? "plusplus" : "random"); });
  integer("eval.kmeans_max_iters", "Lloyd iteration cap", c.kmeans.max_iters);
  flag("eval.baseline", "also report k-means on the unreduced data", c.baseline);

  for (const char* p : kGridParameters) {
    const std::string name = std::string("grid.") + p;
    add(name, std::string("grid values for ") + p + ", comma separated",
        [&c, name, p](const std::string& v) {
          std::vector<double> vals;
          for (const auto& s : split_list(v)) vals.push_back(to_double(name, s));
          if (vals.empty()) c.grid.erase(p);
          else c.grid[p] = vals;
        },
        [&c, p] {
          const auto it = c.grid.find(p);
          if (it == c.grid.end()) return std::string();
          return join<double>(it->second, [](const double& x) { return show(x); });
        });
  }
  add("grid.select", "auto | acc | silhouette",
      [&c](const std::string& v) {
        const std::string t = lower(std::string(trim(v)));
        if (t == "auto") c.selection = Selection::kAuto;
        else if (t == "acc") c.selection = Selection::kAcc;
        else if (t == "silhouette") c.selection = Selection::kSilhouette;
        else throw ConfigError("grid.select", "expected auto, acc or silhouette");
      },
      [&c] {
        switch (c.selection) {
          case Selection::kAcc: return std::string("acc");
          case Selection::kSilhouette: return std::string("silhouette");
          default: return std::string("auto");
        }
      });
  add("sweep.p", "feature counts, comma separated",
      [&c](const std::string& v) {
        c.sweep_p.clear();
        for (const auto& s : split_list(v)) c.sweep_p.push_back(to_int("sweep.p", s));
      },
      [&c] { return join<Index>(c.sweep_p, [](const Index& i) { return std::to_string(i); }); });

  text("output_dir", "directory for reports", c.output_dir);
  integer("workers", "concurrent fits for grid and sweep", c.workers);
  add("seed", "master seed",
      [&c](const std::string& v) {
        c.seed = to_u64("seed", v);
        c.model.seed = c.seed;
      },
      [&c] { return std::to_string(c.seed); });
  flag("save_model", "write the model checkpoint", c.save_model);
  return k;
}

inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (auto& k : config_keys(c)) {
    if (k.name == key) {
      k.set(value);
      return;
    }
  }
  throw ConfigError(key, "unknown key");
}

/// Parses "key = value" lines; '#' starts a comment.
inline void apply_config_stream(ExperimentConfig& c, std::istream& in, const std::string& origin) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string_view t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno), "expected key = value");
    set_config_value(c, std::string(detail::trim(t.substr(0, eq))), std::string(detail::trim(t.substr(eq + 1))));
  }
}

inline void apply_config_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  apply_config_stream(c, in, path);
}

/// "key=value" override.
inline void apply_override(ExperimentConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError(kv, "override must look like key=value");
  set_config_value(c, std::string(detail::trim(kv.substr(0, eq))), kv.substr(eq + 1));
}

/// Resolved configuration, one "key = value" line per key.
inline std::string config_snapshot(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  std::string out;
  for (auto& k : config_keys(copy)) out += k.name + " = " + k.get() + "\n";
  return out;
}

inline void validate_experiment(const ExperimentConfig& c) {
  if (c.repetitions < 1) throw ConfigError("eval.repetitions", "must be >= 1");
  if (c.workers < 1) throw ConfigError("workers", "must be >= 1");
  if (!(c.contamination >= 0.0 && c.contamination < 1.0))
    throw ConfigError("contamination.fraction", "must lie in [0, 1)");
  for (const auto& [name, vals] : c.grid)
    if (vals.empty()) throw ConfigError("grid." + name, "empty value list");
}

// ---------------------------------------------------------------------------
// Data preparation

inline Dataset load_dataset(const ExperimentConfig& c) {
  if (c.data_path.empty()) throw ConfigError("data.path", "no dataset given");
  std::string fmt = c.data_format;
  if (fmt == "auto") {
    const std::string ext = detail::lower(std::filesystem::path(c.data_path).extension().string());
    fmt = (ext == ".bin" || ext == ".rfsm") ? "binary" : "csv";
  }
  if (fmt == "binary") return load_dataset_binary(c.data_path);
  CsvOptions opt;
  opt.has_header = c.header;
  if (c.label_column == "none") {
    opt.label_column.reset();
  } else if (c.label_column == "last") {
    std::ifstream in(c.data_path);
    if (!in) throw Error("cannot open " + c.data_path);
    std::string first;
    std::getline(in, first);
    const auto fields = detail::split_csv_record(first, opt.delimiter);
    if (fields.empty()) throw ParseError(c.data_path, 1, 1, "empty first line");
    opt.label_column = fields.size() - 1;
  } else {
    opt.label_column = static_cast<std::size_t>(detail::to_int("data.label_column", c.label_column));
  }
  return load_csv(c.data_path, opt);
}

/// Scaling and contamination in the configured order. Scaling always uses
/// inlier statistics.
inline Dataset prepare_dataset(const Dataset& raw, const ExperimentConfig& c) {
  const ContaminationSpec spec{c.contamination, c.resolved_contamination_seed()};
  const bool contaminate = c.contamination > 0.0;
  auto scale = [&](const Dataset& d) { return c.scale ? scale_unit_interval(d) : d; };
  if (!contaminate) return scale(raw);
  if (c.outlier_order == OutlierOrder::kBeforeScaling) return scale(inject_outliers(raw, spec));
  return inject_outliers(scale(raw), spec);
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed: " + path.string());
}

inline std::string num(double v) { return format_double(v); }

}  // namespace detail

inline constexpr const char* kMetricsHeader =
    "dataset,method,p,acc_mean,acc_std,nmi_mean,nmi_std,repetitions,seed";

inline std::string metrics_row(const std::string& dataset, const std::string& method, Index p,
                               const MetricReport& r) {
  using detail::num;
  return detail::csv_escape(dataset) + "," + method + "," + std::to_string(p) + "," + num(r.acc_mean) +
         "," + num(r.acc_std) + "," + num(r.nmi_mean) + "," + num(r.nmi_std) + "," +
         std::to_string(r.repetitions) + "," + std::to_string(r.seed) + "\n";
}

inline std::string history_csv(const TrainHistory& h) {
  using detail::num;
  std::string out = "iteration,ae,rsr,l21,fit,smooth,entropy,total,gpi_iterations\n";
  for (const auto& r : h.records) {
    const auto& c = r.components;
    out += std::to_string(r.iteration) + "," + num(c.ae) + "," + num(c.rsr) + "," + num(c.l21) +
           "," + num(c.fit) + "," + num(c.smooth) + "," + num(c.entropy) + "," + num(c.total()) +
           "," + std::to_string(r.gpi_iterations) + "\n";
  }
  return out;
}

inline std::string ranking_csv(const FeatureRanking& r, const std::vector<std::string>& names) {
  std::string out = "rank,feature,name,score\n";
  for (std::size_t i = 0; i < r.order.size(); ++i) {
    const auto j = static_cast<std::size_t>(r.order[i]);
    const std::string name = j < names.size() ? names[j] : "x" + std::to_string(j);
    out += std::to_string(i + 1) + "," + std::to_string(j) + "," + detail::csv_escape(name) + "," +
           detail::num(r.scores[i]) + "\n";
  }
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct RunManifest {
  std::string command;
  std::string config;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::string> files;

  std::string str() const {
    std::string out = "raeufs-manifest 1\n";
    out += "version = " + std::string(kVersion) + "\n";
    out += "command = " + command + "\n";
    out += "seed = " + std::to_string(seed) + "\n";
    out += "started = " + started + "\n";
    out += "finished = " + finished + "\n";
    for (const auto& f : files) out += "file = " + f + "\n";
    out += "[config]\n" + config;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Worker pool

/// Runs job(i) for i in [0, n) on up to `workers` threads. The first
/// exception (lowest index) is rethrown after all jobs finish.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Commands

struct RunResult {
  Dataset data;  // prepared (scaled, possibly contaminated)
  Model model;
  FeatureRanking ranking;
  MetricReport report;
  std::optional<MetricReport> baseline;
  std::optional<double> silhouette;
};

inline bool has_scored_rows(const Dataset& d) {
  if (!d.labels) return false;
  for (std::size_t i = 0; i < d.inlier_mask.size(); ++i)
    if (d.inlier_mask[i] && (*d.labels)[i] != kNoLabel) return true;
  return false;
}

/// fit -> reduce -> evaluate on already prepared data.
inline RunResult run_prepared(const Dataset& data, const ExperimentConfig& c,
                              bool want_silhouette = false) {
  RunResult r;
  r.data = data;
  r.model = fit(data, c.model);
  r.ranking = rank_features(r.model.net.W);
  const Matrix reduced = reduce(data, r.model, c.mode, c.model.p);
  EvaluateOptions eo{c.kmeans, c.nmi_variant};
  if (has_scored_rows(data))
    r.report = evaluate(data, reduced, c.model.c, c.repetitions, c.resolved_eval_seed(), eo);
  if (c.baseline && has_scored_rows(data))
    r.baseline = evaluate(data, data.X, c.model.c, c.repetitions, c.resolved_eval_seed(), eo);
  if (want_silhouette)
    r.silhouette = mean_kmeans_silhouette(reduced, c.model.c, c.repetitions,
                                          c.resolved_eval_seed(), c.kmeans);
  return r;
}

inline std::filesystem::path resolve_output_dir(const ExperimentConfig& c) {
  std::string dir = c.output_dir;
  if (dir.empty()) {
    const char* env = std::getenv(kOutputDirEnv);
    dir = env && *env ? env : "raeufs_out";
  }
  std::filesystem::create_directories(dir);
  return dir;
}

/// Writes metrics.csv, history.csv, ranking.csv and the model checkpoint;
/// returns the file names written.
inline std::vector<std::string> write_run_outputs(const std::filesystem::path& dir,
                                                  const RunResult& r,
                                                  const ExperimentConfig& c) {
  std::vector<std::string> files;
  std::string metrics = std::string(kMetricsHeader) + "\n";
  if (has_scored_rows(r.data)) metrics += metrics_row(c.resolved_name(), "raeufs", c.model.p, r.report);
  if (r.baseline) metrics += metrics_row(c.resolved_name(), "baseline", r.data.cols(), *r.baseline);
  detail::write_file(dir / "metrics.csv", metrics);
  files.push_back("metrics.csv");
  detail::write_file(dir / "history.csv", history_csv(r.model.history));
  files.push_back("history.csv");
  detail::write_file(dir / "ranking.csv", ranking_csv(r.ranking, r.data.feature_names));
  files.push_back("ranking.csv");
  if (c.save_model) {
    TensorList t = network_tensors(r.model.net);
    t.push_back({"F", r.model.F, "pseudo_labels"});
    t.push_back({"S", r.model.graph.S, "affinity"});
    save_tensors((dir / "model").string(), t);
    files.push_back("model.manifest");
    files.push_back("model.tensors");
  }
  return files;
}

inline void write_manifest(const std::filesystem::path& dir, RunManifest m) {
  m.finished = utc_timestamp();
  m.files.push_back("manifest.txt");
  detail::write_file(dir / "manifest.txt", m.str());
}

inline RunResult cmd_run(const ExperimentConfig& c) {
  validate_experiment(c);
  RunManifest man{"run", config_snapshot(c), c.seed, utc_timestamp(), "", {}};
  const Dataset data = prepare_dataset(load_dataset(c), c);
  ExperimentConfig cc = c;
  cc.model.seed = c.seed;
  RunResult r = run_prepared(data, cc);
  const auto dir = resolve_output_dir(c);
  man.files = write_run_outputs(dir, r, c);
  write_manifest(dir, man);
  return r;
}

struct GridCell {
  std::size_t index = 0;
  std::map<std::string, double> values;
  std::uint64_t seed = 0;
  MetricReport report;
  std::optional<double> silhouette;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
  bool by_silhouette = false;
  RunResult best_run;
};

/// Cartesian product in kGridParameters order, last parameter fastest.
inline std::vector<std::map<std::string, double>> grid_cells(const ExperimentConfig& c) {
  std::vector<std::map<std::string, double>> cells(1);
  for (const char* p : kGridParameters) {
    const auto it = c.grid.find(p);
    if (it == c.grid.end()) continue;
    std::vector<std::map<std::string, double>> next;
    for (const auto& cell : cells)
      for (double v : it->second) {
        auto copy = cell;
        copy[p] = v;
        next.push_back(std::move(copy));
      }
    cells = std::move(next);
  }
  return cells;
}

inline void set_weight(RaeufsConfig& m, const std::string& name, double v) {
  if (name == "alpha") m.alpha = v;
  else if (name == "beta") m.beta = v;
  else if (name == "gamma") m.gamma = v;
  else if (name == "eta") m.eta = v;
  else if (name == "lambda1") m.lambda1 = v;
  else if (name == "lambda2") m.lambda2 = v;
  else throw ConfigError("grid." + name, "not a grid parameter");
}

inline double get_weight(const RaeufsConfig& m, const std::string& name) {
  if (name == "alpha") return m.alpha;
  if (name == "beta") return m.beta;
  if (name == "gamma") return m.gamma;
  if (name == "eta") return m.eta;
  if (name == "lambda1") return m.lambda1;
  return m.lambda2;
}

/// Cell i trains with seed derive_seed(seed, i), except cell 0 which uses
/// the run seed itself.
inline std::uint64_t cell_seed(std::uint64_t seed, std::size_t i) {
  return i == 0 ? seed : derive_seed(seed, i);
}

/// True when cell a ranks strictly above cell b.
inline bool better_cell(const GridCell& a, const GridCell& b, bool by_silhouette) {
  if (by_silhouette) {
    if (*a.silhouette != *b.silhouette) return *a.silhouette > *b.silhouette;
    return a.index < b.index;
  }
  if (a.report.acc_mean != b.report.acc_mean) return a.report.acc_mean > b.report.acc_mean;
  if (a.report.nmi_mean != b.report.nmi_mean) return a.report.nmi_mean > b.report.nmi_mean;
  return a.index < b.index;
}

inline GridResult cmd_grid(const ExperimentConfig& c) {
  validate_experiment(c);
  if (c.grid.empty()) throw ConfigError("grid", "no grid parameters given");
  RunManifest man{"grid", config_snapshot(c), c.seed, utc_timestamp(), "", {}};
  const Dataset data = prepare_dataset(load_dataset(c), c);
  const bool labelled = has_scored_rows(data);
  GridResult g;
  g.by_silhouette = c.selection == Selection::kSilhouette ||
                    (c.selection == Selection::kAuto && !labelled);
  if (!g.by_silhouette && !labelled)
    throw ConfigError("grid.select", "acc selection needs labelled inlier rows");

  const auto values = grid_cells(c);
  g.cells.resize(values.size());
  std::vector<RunResult> runs(values.size());
  parallel_for(values.size(), c.workers, [&](std::size_t i) {
    ExperimentConfig cc = c;
    for (const auto& [k, v] : values[i]) set_weight(cc.model, k, v);
    cc.model.seed = cell_seed(c.seed, i);
    cc.baseline = false;
    RunResult r = run_prepared(data, cc, g.by_silhouette);
    GridCell& cell = g.cells[i];
    cell.index = i;
    cell.values = values[i];
    cell.seed = cc.model.seed;
    cell.report = r.report;
    cell.silhouette = r.silhouette;
    runs[i] = std::move(r);
  });
  for (std::size_t i = 1; i < g.cells.size(); ++i)
    if (better_cell(g.cells[i], g.cells[g.best], g.by_silhouette)) g.best = i;
  g.best_run = std::move(runs[g.best]);
  if (c.baseline && labelled)
    g.best_run.baseline = evaluate(data, data.X, c.model.c, c.repetitions, c.resolved_eval_seed(),
                                   {c.kmeans, c.nmi_variant});

  using detail::num;
  std::string grid_csv = "cell";
  for (const char* p : kGridParameters) grid_csv += std::string(",") + p;
  grid_csv += ",seed,acc_mean,acc_std,nmi_mean,nmi_std,silhouette,best\n";
  ExperimentConfig base = c;
  for (const auto& cell : g.cells) {
    grid_csv += std::to_string(cell.index);
    for (const char* p : kGridParameters) {
      const auto it = cell.values.find(p);
      grid_csv += "," + num(it != cell.values.end() ? it->second : get_weight(c.model, p));
    }
    grid_csv += "," + std::to_string(cell.seed);
    if (labelled)
      grid_csv += "," + num(cell.report.acc_mean) + "," + num(cell.report.acc_std) + "," +
                  num(cell.report.nmi_mean) + "," + num(cell.report.nmi_std);
    else
      grid_csv += ",,,,";
    grid_csv += "," + (cell.silhouette ? num(*cell.silhouette) : std::string());
    grid_csv += cell.index == g.best ? ",1\n" : ",0\n";
  }

  // One slice per swept parameter through the best cell.
  std::string sens = "parameter,value,cell,acc_mean,acc_std,nmi_mean,nmi_std,silhouette\n";
  const GridCell& best = g.cells[g.best];
  for (const char* p : kGridParameters) {
    const auto it = c.grid.find(p);
    if (it == c.grid.end()) continue;
    for (const auto& cell : g.cells) {
      bool on_slice = true;
      for (const auto& [k, v] : cell.values)
        if (k != p && v != best.values.at(k)) on_slice = false;
      if (!on_slice) continue;
      sens += std::string(p) + "," + num(cell.values.at(p)) + "," + std::to_string(cell.index);
      if (labelled)
        sens += "," + num(cell.report.acc_mean) + "," + num(cell.report.acc_std) + "," +
                num(cell.report.nmi_mean) + "," + num(cell.report.nmi_std);
      else
        sens += ",,,,";
      sens += "," + (cell.silhouette ? num(*cell.silhouette) : std::string()) + "\n";
    }
  }

  const auto dir = resolve_output_dir(c);
  ExperimentConfig best_cfg = c;
  for (const auto& [k, v] : best.values) set_weight(best_cfg.model, k, v);
  best_cfg.model.seed = best.seed;
  man.files = write_run_outputs(dir, g.best_run, best_cfg);
  detail::write_file(dir / "grid.csv", grid_csv);
  detail::write_file(dir / "sensitivity.csv", sens);
  man.files.push_back("grid.csv");
  man.files.push_back("sensitivity.csv");
  write_manifest(dir, man);
  return g;
}

struct SweepPoint {
  Index p = 0;
  MetricReport report;
};

inline std::vector<SweepPoint> cmd_sweep(const ExperimentConfig& c) {
  validate_experiment(c);
  if (c.sweep_p.empty()) throw ConfigError("sweep.p", "no feature counts given");
  RunManifest man{"sweep", config_snapshot(c), c.seed, utc_timestamp(), "", {}};
  const Dataset data = prepare_dataset(load_dataset(c), c);
  for (Index p : c.sweep_p)
    if (p < 1 || p > data.cols())
      throw ConfigError("sweep.p", "feature count " + std::to_string(p) + " outside [1, D = " +
                                       std::to_string(data.cols()) + "]");
  if (!has_scored_rows(data)) throw ConfigError("data.label_column", "sweep needs labels");

  std::vector<SweepPoint> points(c.sweep_p.size());
  parallel_for(points.size(), c.workers, [&](std::size_t i) {
    ExperimentConfig cc = c;
    cc.model.p = c.sweep_p[i];
    cc.model.seed = c.seed;
    cc.baseline = false;
    points[i] = {cc.model.p, run_prepared(data, cc).report};
  });

  using detail::num;
  std::string out = "p,acc_mean,acc_std,nmi_mean,nmi_std\n";
  for (const auto& pt : points)
    out += std::to_string(pt.p) + "," + num(pt.report.acc_mean) + "," + num(pt.report.acc_std) +
           "," + num(pt.report.nmi_mean) + "," + num(pt.report.nmi_std) + "\n";
  const auto dir = resolve_output_dir(c);
  detail::write_file(dir / "sweep.csv", out);
  man.files.push_back("sweep.csv");
  write_manifest(dir, man);
  return points;
}

/// Generates a synthetic dataset and writes it as CSV (or as a binary
/// matrix file when the path ends in .bin).
inline Dataset cmd_make_synthetic(const SyntheticSpec& spec, const std::string& path) {
  Dataset d = make_synthetic(spec);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  if (detail::lower(std::filesystem::path(path).extension().string()) == ".bin")
    save_dataset_binary(path, d);
  else
    save_csv(path, d);
  return d;
}

/// Manifest text from an output directory or a manifest path.
inline std::string cmd_inspect(const std::string& path) {
  std::filesystem::path p(path);
  if (std::filesystem::is_directory(p)) p /= "manifest.txt";
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace raeufs
