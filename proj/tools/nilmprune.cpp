// nilmprune: reproducible desk-scale pruning experiments for NILM models.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nilmprune/errors.hpp"
#include "nilmprune/experiment.hpp"
#include "nilmprune/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nilmprune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> threshold;
  std::string strategy;
  std::string grid;
  std::vector<std::string> inputs;
  std::string model;
  bool resume = false;
};

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
  if (!f) throw DataError("failed writing " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

std::size_t thread_cap() {
  const char* env = std::getenv("NILMPRUNE_THREADS");
  if (!env || !*env) return 1;
  try {
    const long v = std::stol(env);
    if (v < 1) throw std::invalid_argument(env);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(std::string("NILMPRUNE_THREADS must be a positive integer, got '") + env + "'");
  }
}

// Exclusive ownership of an output directory for the lifetime of a command.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".nilmprune.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f) throw DataError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

// Collects everything a command read and wrote, then writes manifest.json.
class Manifest {
 public:
  Manifest(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {}

  void input(const fs::path& p) { inputs_.push_back({{"path", p.string()}, {"fnv1a64", fnv1a_hex(read_file(p))}}); }
  void output(const std::string& name) {
    outputs_.push_back({{"path", name}, {"fnv1a64", fnv1a_hex(read_file(out_ / name))}});
  }
  void set(const std::string& key, json value) { extra_[key] = std::move(value); }

  void write(const json& config, std::uint64_t seed) const {
    json j = {{"command", command_},
              {"config", config},
              {"seed", seed},
              {"library_version", NILMPRUNE_VERSION},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"duration_seconds",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    write_json(out_ / "manifest.json", j);
  }

 private:
  std::string command_;
  fs::path out_;
  json inputs_ = json::array();
  json outputs_ = json::array();
  json extra_ = json::object();
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// A manifest passed as --config contributes its resolved config section.
ExperimentConfig load_config(const Options& o, Manifest* manifest) {
  ExperimentConfig cfg = default_experiment_config();
  if (!o.config.empty()) {
    json j;
    try {
      j = json::parse(read_file(o.config));
    } catch (const json::parse_error& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
    if (j.is_object() && j.contains("command") && j.contains("config")) j = j["config"];
    cfg = experiment_config_from_json(j);
    if (manifest) manifest->input(o.config);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.strategy.empty()) cfg.prune.strategy = strategy_from_string(o.strategy);
  if (o.threshold) cfg.prune.threshold = *o.threshold;
  if (!o.grid.empty()) {
    parse_grid(o.grid);
    cfg.prune.grid = o.grid;
  }
  return experiment_config_from_json(to_json(cfg));
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out DIR is required");
  return o.out;
}

RunRecord record_for(const ModelGraph& model, const MetricReport& m, const std::string& appliance,
                     const std::string& approach, double threshold) {
  RunRecord r;
  r.appliance = appliance;
  r.approach = approach;
  r.threshold = threshold;
  r.params = count_params(model).nonzero;
  r.macs = count_macs(model);
  r.size_bytes = serialize_model(model).size();
  r.training_params = r.params;
  r.training_macs = r.macs;
  r.f1 = m.classification.f1;
  r.mae = m.regression.mae;
  r.smape = m.regression.smape;
  r.mre = m.regression.mre;
  return r;
}

json metrics_json(const MetricReport& m, const std::vector<std::string>& names) {
  const json all = to_json(m);
  json j = json::object();
  for (const auto& n : names) j[n] = all.at(n);
  j["detail"] = all;
  return j;
}

void print_warnings(const std::vector<std::string>& w) {
  for (const auto& m : w) std::cerr << "warning: " << m << "\n";
}

int cmd_synth(const Options& o) {
  const fs::path out = require_out(o);
  DirLock lock(out);
  Manifest man("synth", out);
  const auto cfg = load_config(o, &man);
  const auto ds = synth_dataset(cfg);
  for (const auto& h : ds.houses) {
    write_plegma_csv(h.series, out / (h.id + ".csv"));
    man.output(h.id + ".csv");
  }
  write_appliance_metadata(ds.metas, out / "appliances_metadata.csv", ds.parameters);
  man.output("appliances_metadata.csv");
  man.write(to_json(cfg), cfg.seed);
  std::cout << "wrote " << ds.houses.size() << " synthetic houses to " << out.string() << "\n";
  return kExitOk;
}

int cmd_preprocess(const Options& o) {
  if (o.inputs.size() != 1) throw ConfigError("preprocess takes exactly one --in DIR");
  const fs::path in = o.inputs[0];
  const fs::path out = require_out(o);
  if (!fs::is_directory(in)) throw DataError("--in " + in.string() + " is not a directory");
  DirLock lock(out);
  Manifest man("preprocess", out);
  const auto cfg = load_config(o, &man);
  const auto params = cfg.dataset.preprocess;

  std::vector<ApplianceMeta> metas;
  const fs::path meta_path = cfg.eval.metadata.empty() ? in / "appliances_metadata.csv" : fs::path(cfg.eval.metadata);
  if (fs::exists(meta_path)) {
    metas = read_appliance_metadata(meta_path);
    man.input(meta_path);
    fs::copy_file(meta_path, out / "appliances_metadata.csv", fs::copy_options::overwrite_existing);
    man.output("appliances_metadata.csv");
  } else {
    std::cerr << "warning: no appliances_metadata.csv; appliance channels are only checked for negatives\n";
  }

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in)) {
    if (e.path().extension() == ".csv" && e.path().filename() != "appliances_metadata.csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no household CSV files in " + in.string());

  std::vector<std::string> failures;
  json summary = json::array();
  for (const auto& f : files) {
    try {
      const auto series = f.stem().string().find("environment") != std::string::npos ? parse_environmental_csv(f)
                                                                                        : parse_plegma_csv(f);
      man.input(f);
      const auto p = series.p_agg.empty() ? PreprocessParams::environmental() : params;
      const auto r = preprocess(series, metas, p);
      const auto name = f.filename().string();
      write_plegma_csv(r.series, out / name);
      const auto prov = provenance_json(r, p);
      write_json(out / (f.stem().string() + ".provenance.json"), prov);
      man.output(name);
      man.output(f.stem().string() + ".provenance.json");
      summary.push_back({{"file", name}, {"nan_percentage", prov["nan_percentage"]},
                         {"issues_percentage", prov["issues_percentage"]}});
      std::size_t abnormal = 0;
      for (const auto& c : r.channels) abnormal += c.abnormal;
      std::cout << name << ": " << r.series.size() << " samples, " << abnormal << " abnormal, NaN "
                << prov["nan_percentage"].get<double>() << "%, issues " << r.issues_percentage() << "%\n";
    } catch (const Error& e) {
      failures.push_back(f.filename().string() + ": " + e.what());
    }
  }
  write_json(out / "provenance.json", {{"parameters", to_json(params)}, {"files", summary}, {"errors", failures}});
  man.output("provenance.json");
  man.set("errors", failures);
  man.write(to_json(cfg), cfg.seed);
  if (!failures.empty()) {
    for (const auto& m : failures) std::cerr << "error: " << m << "\n";
    return kExitData;
  }
  return kExitOk;
}

int cmd_train(const Options& o) {
  const fs::path out = require_out(o);
  DirLock lock(out);
  Manifest man("train", out);
  const auto cfg = load_config(o, &man);
  const auto data = load_experiment_data(cfg);
  print_warnings(data.warnings);

  ModelGraph model;
  const fs::path resume_from = o.model.empty() ? out / "model.nprm" : fs::path(o.model);
  if (o.resume && fs::exists(resume_from)) {
    man.input(resume_from);
    model = load_model(resume_from);
    std::cout << "resuming from epoch " << model.epochs_trained << "\n";
  } else {
    if (o.resume) std::cerr << "warning: nothing to resume at " << resume_from.string() << ", starting fresh\n";
    model = fresh_model(cfg);
  }
  ExperimentConfig run_cfg = cfg;
  run_cfg.train.epochs = std::max<std::int64_t>(0, cfg.train.epochs - model.epochs_trained);
  if (run_cfg.train.epochs > 0) {
    train_model(model, run_cfg, data);
  } else if (!model.normalization) {
    model.normalization = data.splits.train.stats;
  }

  save_model(model, out / "model.nprm");
  man.output("model.nprm");
  std::ostringstream loss;
  loss << "epoch,loss\n";
  loss.precision(17);
  for (std::size_t e = 0; e < model.loss_history.size(); ++e) loss << e + 1 << ',' << model.loss_history[e] << '\n';
  write_file(out / "loss.csv", loss.str());
  man.output("loss.csv");

  const auto m = evaluate_model(model, data.splits.test, data.meta, data.sample_period);
  write_json(out / "metrics.json", metrics_json(m, cfg.eval.metrics));
  man.output("metrics.json");
  write_json(out / "run.json", to_json(record_for(model, m, data.meta.name, "baseline", 0.0)));
  man.output("run.json");
  man.set("epochs_trained", model.epochs_trained);
  man.write(to_json(cfg), cfg.seed);
  std::cout << "trained " << model.epochs_trained << " epochs; held-out F1 " << m.classification.f1 << ", MAE "
            << m.regression.mae << "\n";
  return kExitOk;
}

int cmd_prune(const Options& o) {
  const fs::path out = require_out(o);
  DirLock lock(out);
  Manifest man("prune", out);
  const auto cfg = load_config(o, &man);
  const Strategy s = cfg.prune.strategy;
  if (s == Strategy::OptNilm && !o.model.empty()) {
    throw ConfigError("opt-nilm prunes a fresh model before training; drop --model");
  }
  if (s != Strategy::OptNilm && o.model.empty()) {
    throw ConfigError(to_string(s) + " prunes a trained model; pass it with --model");
  }
  const auto data = load_experiment_data(cfg);
  print_warnings(data.warnings);
  std::optional<ModelGraph> trained;
  if (!o.model.empty()) {
    trained = load_model(o.model);
    man.input(o.model);
  }
  const auto run = run_strategy(cfg, data, s, cfg.prune.threshold, trained ? &*trained : nullptr);
  print_warnings(run.report.warnings);

  save_model(run.model, out / "model.nprm");
  man.output("model.nprm");
  write_json(out / "prune_report.json", to_json(run.report));
  man.output("prune_report.json");
  const auto m = evaluate_model(run.model, data.splits.test, data.meta, data.sample_period);
  write_json(out / "metrics.json", metrics_json(m, cfg.eval.metrics));
  man.output("metrics.json");
  auto rec = record_for(run.model, m, data.meta.name, to_string(s), cfg.prune.threshold);
  if (s != Strategy::OptNilm) {
    rec.training_params = run.report.params_before;
    rec.training_macs = run.report.macs_before;
  }
  write_json(out / "run.json", to_json(rec));
  man.output("run.json");
  man.write(to_json(cfg), cfg.seed);

  const auto& r = run.report;
  std::cout << to_string(s) << " at " << cfg.prune.threshold << ": params " << r.params_before << " -> "
            << r.params_after << " (" << 100.0 * r.param_reduction() << "% fewer), MACs " << r.macs_before
            << " -> " << r.macs_after << " (" << r.macs_efficiency() << "x), F1 " << m.classification.f1 << "\n";
  if (r.rewind_verified) std::cout << "rewind to theta_0 verified: " << (*r.rewind_verified ? "yes" : "no") << "\n";
  return kExitOk;
}

int cmd_sweep(const Options& o) {
  const fs::path out = require_out(o);
  DirLock lock(out);
  Manifest man("sweep", out);
  const auto cfg = load_config(o, &man);
  const Strategy s = cfg.prune.strategy;
  if (s != Strategy::OptNilm && o.model.empty()) {
    throw ConfigError(to_string(s) + " sweeps prune a trained model; pass it with --model");
  }
  const auto data = load_experiment_data(cfg);
  print_warnings(data.warnings);
  std::optional<ModelGraph> trained;
  if (!o.model.empty()) {
    trained = load_model(o.model);
    man.input(o.model);
  }
  const auto grid = parse_grid(cfg.prune.grid);
  const auto curve = run_sweep(cfg, data, s, grid, trained ? &*trained : nullptr, thread_cap());

  write_curve_csv(curve, out / "curve.csv");
  man.output("curve.csv");
  write_json(out / "curve.json", to_json(curve));
  man.output("curve.json");
  std::ostringstream plot;
  plot.precision(17);
  plot << "# x=" << to_string(cfg.prune.axis) << " y=f1\n";
  for (const auto& p : curve.points) {
    if (p.failed() || std::isnan(p.f1)) continue;
    plot << compression_coordinate(curve, p, cfg.prune.axis) << ' ' << p.f1 << '\n';
  }
  write_file(out / "plot.dat", plot.str());
  man.output("plot.dat");

  std::size_t failed = 0;
  for (const auto& p : curve.points) {
    if (!p.failed()) continue;
    ++failed;
    std::cerr << "warning: threshold " << p.threshold << " failed: " << p.error << "\n";
  }
  json selection = {{"strategy", curve.strategy}, {"appliance", curve.appliance}, {"axis", to_string(cfg.prune.axis)},
                    {"points", curve.points.size()}, {"failed_points", failed}};
  int code = kExitOk;
  try {
    const auto best = optimal_threshold(curve, cfg.prune.axis);
    selection["p_opt"] = best.threshold;
    selection["distance"] = best.distance;
    std::cout << "p_opt " << best.threshold << " (distance " << best.distance << ")\n";
  } catch (const NumericError& e) {
    selection["p_opt"] = nullptr;
    selection["error"] = e.what();
    std::cerr << "error: " << e.what() << "\n";
    code = kExitNumeric;
  }
  write_json(out / "selection.json", selection);
  man.output("selection.json");
  man.write(to_json(cfg), cfg.seed);
  return code;
}

int cmd_eval(const Options& o) {
  if (o.model.empty()) throw ConfigError("eval needs --model FILE");
  const fs::path out = require_out(o);
  DirLock lock(out);
  Manifest man("eval", out);
  const auto cfg = load_config(o, &man);
  const auto data = load_experiment_data(cfg);
  print_warnings(data.warnings);
  const auto model = load_model(o.model);
  man.input(o.model);
  const auto m = evaluate_model(model, data.splits.test, data.meta, data.sample_period);
  auto j = metrics_json(m, cfg.eval.metrics);
  j["params"] = count_params(model).nonzero;
  j["macs"] = count_macs(model);
  j["size_bytes"] = serialize_model(model).size();
  write_json(out / "metrics.json", j);
  man.output("metrics.json");
  man.write(to_json(cfg), cfg.seed);
  std::cout << "F1 " << m.classification.f1 << ", MAE " << m.regression.mae << ", SMAPE " << m.regression.smape
            << "\n";
  return kExitOk;
}

int cmd_report(const Options& o) {
  if (o.inputs.empty()) throw ConfigError("report needs at least one --in RUN_DIR");
  const fs::path out = require_out(o);
  DirLock lock(out);
  Manifest man("report", out);
  std::vector<RunRecord> rows;
  std::vector<std::string> missing;
  for (const auto& dir : o.inputs) {
    const fs::path p = fs::path(dir) / "run.json";
    if (!fs::exists(p)) {
      missing.push_back(dir + ": no run.json");
      continue;
    }
    try {
      rows.push_back(run_record_from_json(json::parse(read_file(p))));
      man.input(p);
    } catch (const json::parse_error& e) {
      missing.push_back(dir + ": " + e.what());
    } catch (const FormatError& e) {
      missing.push_back(dir + ": " + e.what());
    }
  }
  for (const auto& m : missing) std::cerr << "error: " << m << "\n";
  if (rows.empty()) throw DataError("no completed runs to report");
  const auto t = build_report(rows);
  write_file(out / "table.txt", t.text);
  write_file(out / "table.csv", t.performance_csv);
  write_file(out / "improvement.csv", t.improvement_csv);
  for (const char* n : {"table.txt", "table.csv", "improvement.csv"}) man.output(n);
  man.set("missing", missing);
  man.write(json::object(), 0);
  std::cout << t.text;
  return missing.empty() ? kExitOk : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pruning experiments for NILM seq2seq models"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON config, or a manifest.json to re-run");
    c->add_option("--seed", o.seed, "Seed override");
    c->add_option("--out", o.out, "Output directory");
  };
  auto add_prune = [&](CLI::App* c) {
    c->add_option("--strategy", o.strategy, "after-training | opt-nilm | optimized-structured | dg-structured");
    c->add_option("--model", o.model, "Trained model file");
  };

  auto* synth = app.add_subcommand("synth", "Generate synthetic households in the Plegma schema");
  add_common(synth);
  auto* pre = app.add_subcommand("preprocess", "Resample, clean and gap-fill Plegma CSVs");
  add_common(pre);
  pre->add_option("--in", o.inputs, "Input directory")->required();
  auto* tr = app.add_subcommand("train", "Train the baseline disaggregator");
  add_common(tr);
  tr->add_option("--model", o.model, "Model to resume (default: OUT/model.nprm)");
  tr->add_flag("--resume", o.resume, "Continue from the saved epoch count");
  auto* pr = app.add_subcommand("prune", "Prune with one strategy at one threshold");
  add_common(pr);
  add_prune(pr);
  pr->add_option("--threshold", o.threshold, "Pruning threshold in [0, 0.95]");
  auto* sw = app.add_subcommand("sweep", "Sweep thresholds and select p_opt");
  add_common(sw);
  add_prune(sw);
  sw->add_option("--grid", o.grid, "A:B:STEP, inclusive");
  auto* ev = app.add_subcommand("eval", "Evaluate a model on the held-out house");
  add_common(ev);
  ev->add_option("--model", o.model, "Model file")->required();
  auto* rep = app.add_subcommand("report", "Tabulate completed runs");
  rep->add_option("--in", o.inputs, "Run directories")->required();
  rep->add_option("--out", o.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (pre->parsed()) return cmd_preprocess(o);
    if (tr->parsed()) return cmd_train(o);
    if (pr->parsed()) return cmd_prune(o);
    if (sw->parsed()) return cmd_sweep(o);
    if (ev->parsed()) return cmd_eval(o);
    if (rep->parsed()) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
