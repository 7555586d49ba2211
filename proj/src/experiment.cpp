#include "nilmprune/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "nilmprune/errors.hpp"
#include "nilmprune/rng.hpp"
#include "nilmprune/serialize.hpp"

namespace nilmprune {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

std::vector<std::string> read_strings(const json& j, const char* key, const std::string& where) {
  std::vector<std::string> out;
  read(j, key, out, where);
  return out;
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

TrainConfig seeded_train(const ExperimentConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  return tc;
}

const ModelGraph& require_trained(const ModelGraph* trained, Strategy s) {
  if (!trained) {
    throw ConfigError("strategy " + to_string(s) + " prunes a trained model; pass one with --model");
  }
  return *trained;
}

void check_threshold(double p) {
  if (!(p >= 0.0 && p <= kMaxSparsity + 1e-9)) {
    throw RangeError("pruning threshold " + shortest(p) + " outside [0, 0.95]");
  }
}

}  // namespace

Strategy strategy_from_string(const std::string& s) {
  if (s == "after-training") return Strategy::AfterTraining;
  if (s == "opt-nilm") return Strategy::OptNilm;
  if (s == "optimized-structured") return Strategy::OptimizedStructured;
  if (s == "dg-structured") return Strategy::DgStructured;
  throw ConfigError("unknown strategy '" + s +
                    "' (expected after-training, opt-nilm, optimized-structured or dg-structured)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::AfterTraining: return "after-training";
    case Strategy::OptNilm: return "opt-nilm";
    case Strategy::OptimizedStructured: return "optimized-structured";
    case Strategy::DgStructured: return "dg-structured";
  }
  return "";
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.train.epochs = 30;
  c.train.batch_size = 8;
  c.train.learning_rate = 1e-3;
  return c;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c = default_experiment_config();
  check_keys(j, {"seed", "dataset", "model", "train", "prune", "eval"}, "config");
  read(j, "seed", c.seed, "config");

  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    const std::string w = "dataset";
    check_keys(d, {"source", "dir", "appliance", "houses", "days", "sample_period", "baseline", "noise_sigma",
                   "templates", "test_houses", "validation_houses", "preprocess"},
               w);
    auto& ds = c.dataset;
    read(d, "source", ds.source, w);
    read(d, "dir", ds.dir, w);
    read(d, "appliance", ds.appliance, w);
    read(d, "houses", ds.houses, w);
    read(d, "days", ds.days, w);
    read(d, "sample_period", ds.sample_period, w);
    read(d, "baseline", ds.baseline, w);
    read(d, "noise_sigma", ds.noise_sigma, w);
    ds.test_houses = read_strings(d, "test_houses", w);
    ds.validation_houses = read_strings(d, "validation_houses", w);
    if (d.contains("templates")) {
      if (!d["templates"].is_array()) throw ConfigError("dataset.templates must be an array");
      ds.templates.clear();
      for (const auto& t : d["templates"]) ds.templates.push_back(template_from_json(t));
    }
    if (d.contains("preprocess")) {
      const auto& p = d["preprocess"];
      const std::string pw = "dataset.preprocess";
      check_keys(p, {"grid_period", "max_gap", "voltage_max", "current_max", "aggregate_max",
                     "clean_appliances_with_metadata"},
                 pw);
      read(p, "grid_period", ds.preprocess.grid_period, pw);
      read(p, "max_gap", ds.preprocess.max_gap, pw);
      read(p, "voltage_max", ds.preprocess.voltage_max, pw);
      read(p, "current_max", ds.preprocess.current_max, pw);
      read(p, "aggregate_max", ds.preprocess.aggregate_max, pw);
      read(p, "clean_appliances_with_metadata", ds.preprocess.clean_appliances_with_metadata, pw);
    }
  }

  if (j.contains("model")) {
    const auto& m = j["model"];
    const std::string w = "model";
    check_keys(m, {"preset", "window", "stride", "convs", "hidden"}, w);
    read(m, "preset", c.model.preset, w);
    read(m, "window", c.model.window, w);
    read(m, "stride", c.model.stride, w);
    read(m, "hidden", c.model.hidden, w);
    if (m.contains("convs")) {
      if (!m["convs"].is_array()) throw ConfigError("model.convs must be an array");
      for (const auto& cv : m["convs"]) {
        check_keys(cv, {"out", "kernel", "stride"}, "model.convs[]");
        ConvStage st;
        read(cv, "out", st.out_channels, "model.convs[]");
        read(cv, "kernel", st.kernel, "model.convs[]");
        read(cv, "stride", st.stride, "model.convs[]");
        c.model.convs.push_back(st);
      }
    }
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    const std::string w = "train";
    check_keys(t, {"epochs", "batch_size", "learning_rate", "optimizer", "patience"}, w);
    read(t, "epochs", c.train.epochs, w);
    read(t, "batch_size", c.train.batch_size, w);
    read(t, "learning_rate", c.train.learning_rate, w);
    std::string opt = "adam";
    read(t, "optimizer", opt, w);
    if (opt == "adam") c.train.optimizer = OptimizerKind::Adam;
    else if (opt == "sgd") c.train.optimizer = OptimizerKind::SGD;
    else throw ConfigError("train.optimizer must be adam or sgd, got '" + opt + "'");
    if (t.contains("patience") && !t["patience"].is_null()) {
      std::int64_t p = 0;
      read(t, "patience", p, w);
      c.train.patience = p;
    }
  }

  if (j.contains("prune")) {
    const auto& p = j["prune"];
    const std::string w = "prune";
    check_keys(p, {"strategy", "threshold", "grid", "rounds", "scope", "fine_tune_epochs", "alpha",
                   "regularization", "sparse_epochs", "top_p", "axis"},
               w);
    auto& ps = c.prune;
    std::string s;
    read(p, "strategy", s, w);
    if (!s.empty()) ps.strategy = strategy_from_string(s);
    read(p, "threshold", ps.threshold, w);
    read(p, "grid", ps.grid, w);
    read(p, "rounds", ps.rounds, w);
    std::string scope;
    read(p, "scope", scope, w);
    if (scope == "per-layer") ps.scope = MaskScope::PerLayer;
    else if (!scope.empty() && scope != "global") throw ConfigError("prune.scope must be global or per-layer");
    if (p.contains("fine_tune_epochs") && !p["fine_tune_epochs"].is_null()) {
      std::int64_t e = 0;
      read(p, "fine_tune_epochs", e, w);
      ps.fine_tune_epochs = e;
    }
    read(p, "alpha", ps.alpha, w);
    read(p, "regularization", ps.regularization, w);
    read(p, "sparse_epochs", ps.sparse_epochs, w);
    read(p, "top_p", ps.top_p, w);
    std::string axis;
    read(p, "axis", axis, w);
    if (!axis.empty()) ps.axis = compression_axis_from_string(axis);
  }

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, {"metadata", "metrics"}, "eval");
    read(e, "metadata", c.eval.metadata, "eval");
    if (e.contains("metrics")) c.eval.metrics = read_strings(e, "metrics", "eval");
  }

  // validation before any work starts
  if (c.dataset.source != "synthetic" && c.dataset.source != "plegma") {
    throw ConfigError("dataset.source must be synthetic or plegma");
  }
  if (c.dataset.source == "plegma" && c.dataset.dir.empty()) throw ConfigError("dataset.dir is required for plegma");
  if (c.dataset.source == "synthetic") {
    if (c.dataset.houses < 2) throw ConfigError("dataset.houses must be >= 2 for a house split");
    if (std::none_of(c.dataset.templates.begin(), c.dataset.templates.end(),
                     [&](const auto& t) { return t.name == c.dataset.appliance; })) {
      throw ConfigError("dataset.appliance '" + c.dataset.appliance + "' has no template");
    }
  }
  if (c.model.stride < 1) throw ConfigError("model.stride must be >= 1");
  if (c.prune.rounds < 1) throw ConfigError("prune.rounds must be >= 1");
  if (c.prune.fine_tune_epochs && *c.prune.fine_tune_epochs < 0) throw ConfigError("prune.fine_tune_epochs must be >= 0");
  if (c.prune.sparse_epochs < 0) throw ConfigError("prune.sparse_epochs must be >= 0");
  check_threshold(c.prune.threshold);
  parse_grid(c.prune.grid);
  static const std::set<std::string> metric_names = {"f1", "mae", "smape", "mre", "precision", "recall", "accuracy"};
  for (const auto& m : c.eval.metrics)
    if (!metric_names.contains(m)) throw ConfigError("unknown metric '" + m + "' in eval.metrics");
  c.train.validate();
  resolve_architecture(c);
  return c;
}

json to_json(const ExperimentConfig& c) {
  json templates = json::array();
  for (const auto& t : c.dataset.templates) templates.push_back(to_json(t));
  json convs = json::array();
  for (const auto& s : c.model.convs) convs.push_back({{"out", s.out_channels}, {"kernel", s.kernel}, {"stride", s.stride}});
  const auto& pp = c.dataset.preprocess;
  json j = {
      {"seed", c.seed},
      {"dataset",
       {{"source", c.dataset.source},
        {"dir", c.dataset.dir},
        {"appliance", c.dataset.appliance},
        {"houses", c.dataset.houses},
        {"days", c.dataset.days},
        {"sample_period", c.dataset.sample_period},
        {"baseline", c.dataset.baseline},
        {"noise_sigma", c.dataset.noise_sigma},
        {"templates", templates},
        {"test_houses", c.dataset.test_houses},
        {"validation_houses", c.dataset.validation_houses},
        {"preprocess",
         {{"grid_period", pp.grid_period},
          {"max_gap", pp.max_gap},
          {"voltage_max", pp.voltage_max},
          {"current_max", pp.current_max},
          {"aggregate_max", pp.aggregate_max},
          {"clean_appliances_with_metadata", pp.clean_appliances_with_metadata}}}}},
      {"model",
       {{"preset", c.model.preset}, {"window", c.model.window}, {"stride", c.model.stride}, {"convs", convs},
        {"hidden", c.model.hidden}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"optimizer", c.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
        {"patience", c.train.patience ? json(*c.train.patience) : json(nullptr)}}},
      {"prune",
       {{"strategy", to_string(c.prune.strategy)},
        {"threshold", c.prune.threshold},
        {"grid", c.prune.grid},
        {"rounds", c.prune.rounds},
        {"scope", c.prune.scope == MaskScope::Global ? "global" : "per-layer"},
        {"fine_tune_epochs", c.prune.fine_tune_epochs ? json(*c.prune.fine_tune_epochs) : json(nullptr)},
        {"alpha", c.prune.alpha},
        {"regularization", c.prune.regularization},
        {"sparse_epochs", c.prune.sparse_epochs},
        {"top_p", c.prune.top_p},
        {"axis", to_string(c.prune.axis)}}},
      {"eval", {{"metadata", c.eval.metadata}, {"metrics", c.eval.metrics}}},
  };
  return j;
}

ArchitectureConfig resolve_architecture(const ExperimentConfig& cfg) {
  ArchitectureConfig a;
  if (cfg.model.convs.empty()) {
    a = architecture_preset(cfg.model.preset);
    if (cfg.model.window) a.window_len = cfg.model.window;
    if (cfg.model.hidden) a.hidden = cfg.model.hidden;
  } else {
    a.name = "custom";
    a.convs = cfg.model.convs;
    a.hidden = cfg.model.hidden;
    a.window_len = cfg.model.window ? cfg.model.window : 128;
  }
  build_layer_specs(a);
  return a;
}

SynthDataset synth_dataset(const ExperimentConfig& cfg) {
  SynthConfig sc;
  sc.appliances = cfg.dataset.templates;
  sc.days = cfg.dataset.days;
  sc.sample_period = cfg.dataset.sample_period;
  sc.baseline = cfg.dataset.baseline;
  sc.noise_sigma = cfg.dataset.noise_sigma;
  SynthDataset out;
  for (std::size_t h = 1; h <= cfg.dataset.houses; ++h) {
    auto g = synth_generate(sc, Rng::mix(cfg.seed, h));
    if (h == 1) {
      out.metas = g.metas;
      out.parameters = g.parameters;
    }
    out.houses.push_back({"house_" + std::to_string(h), std::move(g.series)});
  }
  return out;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  if (cfg.dataset.source == "synthetic") {
    auto s = synth_dataset(cfg);
    d.houses = std::move(s.houses);
    d.metas = std::move(s.metas);
    d.sample_period = cfg.dataset.sample_period;
  } else {
    const std::filesystem::path dir = cfg.dataset.dir;
    if (!std::filesystem::is_directory(dir)) throw DataError("dataset.dir '" + dir.string() + "' is not a directory");
    d.metas = read_appliance_metadata(dir / "appliances_metadata.csv");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".csv" && e.path().filename() != "appliances_metadata.csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no household CSV files in " + dir.string());
    for (const auto& f : files) {
      auto r = preprocess(parse_plegma_csv(f), d.metas, cfg.dataset.preprocess);
      d.houses.push_back({f.stem().string(), std::move(r.series)});
    }
    d.sample_period = cfg.dataset.preprocess.grid_period;
  }
  if (!cfg.eval.metadata.empty()) d.metas = read_appliance_metadata(cfg.eval.metadata);
  d.meta = find_meta(d.metas, cfg.dataset.appliance);
  SplitConfig sc;
  sc.window = resolve_architecture(cfg).window_len;
  sc.stride = cfg.model.stride;
  sc.test_houses = cfg.dataset.test_houses;
  sc.validation_houses = cfg.dataset.validation_houses;
  d.splits = split_by_house(d.houses, d.meta, sc, &d.warnings);
  if (d.splits.train.count == 0) throw DataError("no training windows");
  if (d.splits.test.count == 0) throw DataError("no test windows");
  return d;
}

MetricReport evaluate_model(const ModelGraph& model, const WindowDataset& test, const ApplianceMeta& meta,
                            double sample_period) {
  if (test.count == 0) throw DataError("evaluation needs at least one test window");
  const auto pred = predict_watts(model, test);
  return evaluate_series(test.y, pred, meta, sample_period);
}

ModelGraph fresh_model(const ExperimentConfig& cfg) { return build_model(resolve_architecture(cfg), cfg.seed); }

TrainResult train_model(ModelGraph& model, const ExperimentConfig& cfg, const ExperimentData& data) {
  return train(model, data.splits.train, seeded_train(cfg));
}

StrategyRun run_strategy(const ExperimentConfig& cfg, const ExperimentData& data, Strategy strategy,
                         double threshold, const ModelGraph* trained) {
  check_threshold(threshold);
  const TrainConfig tc = seeded_train(cfg);
  const auto& ps = cfg.prune;
  const auto* train_set = &data.splits.train;
  StrategyRun run;
  switch (strategy) {
    case Strategy::AfterTraining: {
      const auto& base = require_trained(trained, strategy);
      AfterTrainingConfig ac{ps.scope, ps.fine_tune_epochs.value_or(0), tc};
      auto out = prune_after_training(base, train_set, threshold, ac);
      run.report = make_prune_report(to_string(strategy), threshold, base, out.model);
      run.report.warnings = out.warnings;
      run.model = std::move(out.model);
      break;
    }
    case Strategy::OptNilm: {
      ModelGraph fresh = fresh_model(cfg);
      fresh.normalization = data.splits.train.stats;
      ModelGraph ticket = fresh.clone();
      std::optional<bool> verified;
      if (threshold > 0.0) {
        OptNilmConfig oc;
        oc.rounds = ps.rounds;
        oc.train = tc;
        auto out = pretrain_prune(fresh, *train_set, threshold, oc);
        verified = out.rewind_verified && out.monotone;
        ticket = std::move(out.model);
      }
      train(ticket, *train_set, tc);
      run.report = make_prune_report(to_string(strategy), threshold, fresh, ticket);
      run.report.rewind_verified = verified;
      run.model = std::move(ticket);
      break;
    }
    case Strategy::OptimizedStructured: {
      const auto& base = require_trained(trained, strategy);
      if (threshold == 0.0) {
        run.model = base.clone();
      } else {
        const auto state = magnitude_mask(base, threshold, ps.scope);
        auto out = structured_prune_by_profile(base, profile_fractions(per_layer_sparsity_profile(state, base)));
        run.model = std::move(out.model);
        run.report.warnings = out.warnings;
        TrainConfig ft = tc;
        ft.epochs = ps.fine_tune_epochs.value_or(default_fine_tune_epochs(tc.epochs));
        if (ft.epochs > 0) train(run.model, *train_set, ft);
      }
      auto warnings = std::move(run.report.warnings);
      run.report = make_prune_report(to_string(strategy), threshold, base, run.model);
      run.report.warnings = std::move(warnings);
      break;
    }
    case Strategy::DgStructured: {
      const auto& base = require_trained(trained, strategy);
      DgConfig dc;
      dc.alpha = ps.alpha;
      dc.regularization_weight = ps.regularization;
      dc.sparse_epochs = ps.sparse_epochs;
      dc.fine_tune_epochs = ps.fine_tune_epochs.value_or(default_fine_tune_epochs(tc.epochs));
      dc.top_p = ps.top_p;
      dc.train = tc;
      auto out = dg_structured_prune(base, train_set, threshold, dc);
      run.report = make_prune_report(to_string(strategy), threshold, base, out.model);
      run.report.warnings = out.warnings;
      run.model = std::move(out.model);
      break;
    }
  }
  return run;
}

SweepPoint evaluate_point(const ModelGraph& model, const ExperimentData& data) {
  const auto r = evaluate_model(model, data.splits.test, data.meta, data.sample_period);
  SweepPoint p;
  p.f1 = r.classification.f1;
  p.mae = r.regression.mae;
  p.smape = r.regression.smape;
  p.mre = r.regression.mre;
  p.params = count_params(model).nonzero;
  p.macs = count_macs(model);
  p.size_bytes = serialize_model(model).size();
  return p;
}

SweepCurve run_sweep(const ExperimentConfig& cfg, const ExperimentData& data, Strategy strategy,
                     const std::vector<double>& grid, const ModelGraph* trained, std::size_t threads) {
  if (strategy != Strategy::OptNilm) require_trained(trained, strategy);
  auto curve = sweep(
      grid,
      [&](double p) {
        const auto run = run_strategy(cfg, data, strategy, p, trained);
        return evaluate_point(run.model, data);
      },
      {threads});
  curve.strategy = to_string(strategy);
  curve.appliance = data.meta.name;
  return curve;
}

json to_json(const RunRecord& r) {
  return {{"appliance", r.appliance},
          {"approach", r.approach},
          {"threshold", r.threshold},
          {"params", r.params},
          {"macs", r.macs},
          {"size_bytes", r.size_bytes},
          {"training_params", r.training_params},
          {"training_macs", r.training_macs},
          {"f1", r.f1},
          {"mae", r.mae},
          {"smape", r.smape},
          {"mre", r.mre}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  try {
    r.appliance = j.at("appliance");
    r.approach = j.at("approach");
    r.threshold = j.at("threshold");
    r.params = j.at("params");
    r.macs = j.at("macs");
    r.size_bytes = j.at("size_bytes");
    r.training_params = j.at("training_params");
    r.training_macs = j.at("training_macs");
    r.f1 = j.at("f1");
    r.mae = j.at("mae");
    r.smape = j.at("smape");
    r.mre = j.at("mre");
  } catch (const json::exception& e) {
    throw FormatError(std::string("run record: ") + e.what());
  }
  return r;
}

ReportTables build_report(std::vector<RunRecord> rows) {
  if (rows.empty()) throw DataError("report needs at least one completed run");
  std::stable_sort(rows.begin(), rows.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.appliance, a.approach, a.threshold) < std::tie(b.appliance, b.approach, b.threshold);
  });
  ReportTables t;
  std::ostringstream perf, imp, text;
  perf << "appliance,approach,pruning_pct,trainable_params,macs,f1,mae,smape\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %-22s %11s %16s %12s %7s %10s %8s\n", "Appliance", "Approach",
                "Pruning (%)", "Trainable Params", "MACs", "F1", "MAE", "SMAPE");
  text << line;
  for (const auto& r : rows) {
    perf << r.appliance << ',' << r.approach << ',' << shortest(100.0 * r.threshold) << ',' << r.params << ','
         << r.macs << ',' << shortest(r.f1) << ',' << shortest(r.mae) << ',' << shortest(r.smape) << '\n';
    std::snprintf(line, sizeof line, "%-12s %-22s %11s %16llu %12llu %7s %10s %8s\n", r.appliance.c_str(),
                  r.approach.c_str(), fixed(100.0 * r.threshold, 0).c_str(),
                  static_cast<unsigned long long>(r.params), static_cast<unsigned long long>(r.macs),
                  fixed(r.f1, 2).c_str(), fixed(r.mae, 2).c_str(), fixed(r.smape, 3).c_str());
    text << line;
  }

  std::map<std::string, const RunRecord*> baselines;
  for (const auto& r : rows)
    if (r.approach == "baseline" && !baselines.contains(r.appliance)) baselines[r.appliance] = &r;
  imp << "phase,appliance,approach,params_improvement_pct,macs_improvement_pct\n";
  std::ostringstream imp_text;
  auto pct = [](double after, double before) { return before > 0.0 ? 100.0 * (1.0 - after / before) : 0.0; };
  for (const char* phase : {"training", "inference"}) {
    const bool training = std::string(phase) == "training";
    for (const auto& r : rows) {
      if (r.approach == "baseline" || !baselines.contains(r.appliance)) continue;
      const auto& b = *baselines[r.appliance];
      const double dp = pct(static_cast<double>(training ? r.training_params : r.params), static_cast<double>(b.params));
      const double dm = pct(static_cast<double>(training ? r.training_macs : r.macs), static_cast<double>(b.macs));
      imp << phase << ',' << r.appliance << ',' << r.approach << ',' << shortest(dp) << ',' << shortest(dm) << '\n';
      std::snprintf(line, sizeof line, "%-10s %-12s %-22s %12s %12s\n", phase, r.appliance.c_str(), r.approach.c_str(),
                    (fixed(dp, 1) + " %").c_str(), (fixed(dm, 1) + " %").c_str());
      imp_text << line;
    }
  }
  if (!imp_text.str().empty()) {
    std::snprintf(line, sizeof line, "\n%-10s %-12s %-22s %12s %12s\n", "Phase", "Appliance", "Approach",
                  "Params", "MACs");
    text << line << imp_text.str();
  }
  t.rows = std::move(rows);
  t.text = text.str();
  t.performance_csv = perf.str();
  t.improvement_csv = imp.str();
  return t;
}

}  // namespace nilmprune
