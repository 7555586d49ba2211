#include "nilmprune/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "internal/csv.hpp"
#include "nilmprune/errors.hpp"
#include "nilmprune/rng.hpp"

namespace nilmprune {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr long long kUtcOffsetSeconds = 3 * 3600;

const std::set<std::string> kEnvironmentColumns = {"internal_temperature", "internal_humidity",
                                                   "external_temperature", "external_humidity"};

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

double lenient_double(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return kNaN;
  double v = kNaN;
  const char* begin = s.data() + (s[0] == '+' ? 1 : 0);
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return kNaN;
  return v;
}

std::string format_double(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool is_env_series(const HouseholdSeries& s) { return s.p_agg.empty() && !s.environment.empty(); }

HouseholdSeries parse_csv(const std::filesystem::path& path, bool electrical) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path.string() + ": missing header row");
  const auto header = csv::split(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto name = trim(header[i]);
    if (name.empty()) continue;
    if (!col.emplace(name, i).second) throw FormatError(path.string() + ": duplicate column '" + name + "'");
  }
  std::vector<std::string> missing;
  for (const char* m : {"datetime", "P_agg"}) {
    if (std::string(m) == "P_agg" && !electrical) continue;
    if (!col.contains(m)) missing.emplace_back(m);
  }
  if (!missing.empty()) {
    std::string msg = path.string() + ": missing mandatory column";
    for (const auto& m : missing) msg += " '" + m + "'";
    throw FormatError(msg);
  }

  HouseholdSeries s;
  s.sample_period = electrical ? 10.0 : 900.0;
  struct Target {
    std::size_t column;
    std::vector<double>* values;
  };
  std::vector<Target> targets;
  std::vector<std::pair<std::size_t, std::string>> appliance_cols, env_cols;
  for (const auto& [name, idx] : col) {
    if (name == "datetime" || name == "issues" || name == "V" || name == "A" || name == "P_agg") continue;
    (kEnvironmentColumns.contains(name) ? env_cols : appliance_cols).emplace_back(idx, name);
  }
  // keep file order for named channels
  std::sort(appliance_cols.begin(), appliance_cols.end());
  std::sort(env_cols.begin(), env_cols.end());
  for (const auto& [idx, name] : appliance_cols) s.appliances.push_back({name, {}});
  for (const auto& [idx, name] : env_cols) s.environment.push_back({name, {}});
  if (col.contains("V")) targets.push_back({col["V"], &s.voltage});
  if (col.contains("A")) targets.push_back({col["A"], &s.current});
  if (col.contains("P_agg")) targets.push_back({col["P_agg"], &s.p_agg});
  for (std::size_t k = 0; k < appliance_cols.size(); ++k)
    targets.push_back({appliance_cols[k].first, &s.appliances[k].values});
  for (std::size_t k = 0; k < env_cols.size(); ++k) targets.push_back({env_cols[k].first, &s.environment[k].values});

  const std::size_t dt_col = col["datetime"];
  const bool has_issues = col.contains("issues");
  const std::size_t issues_col = has_issues ? col["issues"] : 0;
  std::size_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = csv::split(line);
    auto cell = [&](std::size_t c) -> std::string { return c < cells.size() ? cells[c] : std::string(); };
    double t;
    try {
      t = parse_plegma_datetime(trim(cell(dt_col)));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(row) + ": " + e.what());
    }
    if (!s.timestamps.empty() && t <= s.timestamps.back()) {
      throw FormatError(path.string() + ":" + std::to_string(row) + ": datetime not strictly increasing");
    }
    s.timestamps.push_back(t);
    for (auto& tg : targets) tg.values->push_back(lenient_double(cell(tg.column)));
    if (has_issues) {
      const double v = lenient_double(cell(issues_col));
      s.issues.push_back(!std::isnan(v) && v != 0.0 ? 1 : 0);
    }
  }
  const std::size_t n = s.timestamps.size();
  if (s.voltage.empty() && electrical) s.voltage.assign(n, kNaN);
  if (s.current.empty() && electrical) s.current.assign(n, kNaN);
  if (!has_issues && electrical) s.issues = flag_issues(s.p_agg, s.appliances);
  return s;
}

std::vector<double> resample_channel(const std::vector<double>& t, const std::vector<double>& v,
                                     const std::vector<double>& grid, double period) {
  std::vector<double> vt, vv;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isnan(v[i])) continue;
    vt.push_back(t[i]);
    vv.push_back(v[i]);
  }
  std::vector<double> out(grid.size(), kNaN);
  if (vt.empty()) return out;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double tau = grid[g];
    const auto it = std::lower_bound(vt.begin(), vt.end(), tau);
    std::size_t best = vt.size();
    double dist = std::numeric_limits<double>::infinity();
    if (it != vt.begin()) {
      best = static_cast<std::size_t>(it - vt.begin()) - 1;
      dist = tau - vt[best];
    }
    if (it != vt.end() && *it - tau < dist) {
      best = static_cast<std::size_t>(it - vt.begin());
      dist = *it - tau;
    }
    if (dist < period) out[g] = vv[best];
  }
  return out;
}

}  // namespace

const std::vector<double>& HouseholdSeries::appliance(const std::string& name) const {
  for (const auto& a : appliances)
    if (a.name == name) return a.values;
  throw DataError("no appliance channel named '" + name + "'");
}

bool HouseholdSeries::has_appliance(const std::string& name) const {
  return std::any_of(appliances.begin(), appliances.end(), [&](const auto& a) { return a.name == name; });
}

double parse_plegma_datetime(const std::string& text) {
  int mo = 0, d = 0, y = 0, h = 0, mi = 0, sec = 0, used = 0;
  char ampm[3] = {};
  if (std::sscanf(text.c_str(), "%2d/%2d/%4d %2d:%2d:%2d %2[APMapm]%n", &mo, &d, &y, &h, &mi, &sec, ampm, &used) != 7 ||
      static_cast<std::size_t>(used) != text.size()) {
    throw FormatError("datetime '" + text + "' is not MM/DD/YYYY HH:MM:SS AM/PM");
  }
  const std::string suffix = {static_cast<char>(std::toupper(ampm[0])), static_cast<char>(std::toupper(ampm[1]))};
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 1 || h > 12 || mi > 59 || sec > 59 || (suffix != "AM" && suffix != "PM")) {
    throw FormatError("datetime '" + text + "' is out of range");
  }
  const int h24 = h % 12 + (suffix == "PM" ? 12 : 0);
  const long long days = std::chrono::sys_days(ymd).time_since_epoch().count();
  return static_cast<double>(days * 86400 + h24 * 3600 + mi * 60 + sec - kUtcOffsetSeconds);
}

std::string format_plegma_datetime(double epoch_seconds) {
  const long long t = std::llround(epoch_seconds) + kUtcOffsetSeconds;
  long long days = t / 86400;
  long long rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  const int h24 = static_cast<int>(rem / 3600);
  const int h12 = h24 % 12 == 0 ? 12 : h24 % 12;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%02u/%02u/%04d %02d:%02d:%02d %s", static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(ymd.year()), h12,
                static_cast<int>(rem % 3600 / 60), static_cast<int>(rem % 60), h24 < 12 ? "AM" : "PM");
  return buf;
}

HouseholdSeries parse_plegma_csv(const std::filesystem::path& path) { return parse_csv(path, true); }

HouseholdSeries parse_environmental_csv(const std::filesystem::path& path) { return parse_csv(path, false); }

void write_plegma_csv(const HouseholdSeries& s, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  const bool env = is_env_series(s);
  std::vector<std::pair<std::string, const std::vector<double>*>> cols;
  if (!env) {
    cols.emplace_back("V", &s.voltage);
    cols.emplace_back("A", &s.current);
    cols.emplace_back("P_agg", &s.p_agg);
    for (const auto& a : s.appliances) cols.emplace_back(a.name, &a.values);
  }
  for (const auto& e : s.environment) cols.emplace_back(e.name, &e.values);
  for (const auto& [name, v] : cols) {
    if (!v->empty() && v->size() != s.size()) {
      throw DimensionError("channel '" + name + "' has " + std::to_string(v->size()) + " samples, expected " +
                           std::to_string(s.size()));
    }
  }
  f << "datetime";
  for (const auto& [name, v] : cols) f << ',' << csv::quote(name);
  if (!env) f << ",issues";
  f << '\n';
  for (std::size_t i = 0; i < s.size(); ++i) {
    f << format_plegma_datetime(s.timestamps[i]);
    for (const auto& [name, v] : cols) f << ',' << (v->empty() ? std::string() : format_double((*v)[i]));
    if (!env) f << ',' << (i < s.issues.size() ? static_cast<int>(s.issues[i]) : 0);
    f << '\n';
  }
  if (!f) throw DataError("failed writing " + path.string());
}

std::vector<ApplianceMeta> read_appliance_metadata(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path.string() + ": missing header row");
  const auto header = csv::split(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
  for (const char* m : {"name", "wattage", "on_threshold", "min_on", "min_off"}) {
    if (!col.contains(m)) throw FormatError(path.string() + ": missing column '" + std::string(m) + "'");
  }
  std::vector<ApplianceMeta> out;
  std::size_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = csv::split(line);
    auto num = [&](const char* c) {
      const std::size_t i = col[c];
      const double v = i < cells.size() ? lenient_double(cells[i]) : kNaN;
      if (std::isnan(v)) {
        throw FormatError(path.string() + ":" + std::to_string(row) + ": bad value in column '" + c + "'");
      }
      return v;
    };
    ApplianceMeta m;
    m.name = col["name"] < cells.size() ? trim(cells[col["name"]]) : "";
    m.max_wattage = num("wattage");
    m.on_threshold = num("on_threshold");
    m.min_on = num("min_on");
    m.min_off = num("min_off");
    try {
      m.validate();
    } catch (const ConfigError& e) {
      throw FormatError(path.string() + ":" + std::to_string(row) + ": " + e.what());
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_appliance_metadata(const std::vector<ApplianceMeta>& metas, const std::filesystem::path& path,
                              const std::vector<nlohmann::json>& extra) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << "name,wattage,on_threshold,min_on,min_off" << (extra.empty() ? "" : ",parameters") << '\n';
  for (std::size_t i = 0; i < metas.size(); ++i) {
    const auto& m = metas[i];
    f << csv::quote(m.name) << ',' << format_double(m.max_wattage) << ',' << format_double(m.on_threshold) << ','
      << format_double(m.min_on) << ',' << format_double(m.min_off);
    if (!extra.empty()) f << ',' << csv::quote(i < extra.size() ? extra[i].dump() : "{}");
    f << '\n';
  }
  if (!f) throw DataError("failed writing " + path.string());
}

const ApplianceMeta& find_meta(const std::vector<ApplianceMeta>& metas, const std::string& name) {
  for (const auto& m : metas)
    if (m.name == name) return m;
  throw DataError("no metadata for appliance '" + name + "'");
}

HouseholdSeries resample_nearest(const HouseholdSeries& s, double grid_period) {
  if (!(grid_period > 0.0)) throw ConfigError("grid_period must be > 0");
  if (s.size() == 0) throw DataError("cannot resample an empty series");
  if (!std::is_sorted(s.timestamps.begin(), s.timestamps.end())) {
    throw ContractViolation("resample_nearest needs sorted timestamps");
  }
  const double k0 = std::floor(s.timestamps.front() / grid_period);
  const double k1 = std::ceil(s.timestamps.back() / grid_period);
  std::vector<double> grid;
  for (double k = k0; k <= k1; k += 1.0) grid.push_back(k * grid_period);

  HouseholdSeries out;
  out.sample_period = grid_period;
  out.timestamps = grid;
  auto channel = [&](const std::vector<double>& v) {
    return v.empty() ? std::vector<double>{} : resample_channel(s.timestamps, v, grid, grid_period);
  };
  out.voltage = channel(s.voltage);
  out.current = channel(s.current);
  out.p_agg = channel(s.p_agg);
  for (const auto& a : s.appliances) out.appliances.push_back({a.name, channel(a.values)});
  for (const auto& e : s.environment) out.environment.push_back({e.name, channel(e.values)});
  if (!out.p_agg.empty()) out.issues = flag_issues(out.p_agg, out.appliances);
  return out;
}

std::vector<double> clean_abnormal(std::span<const double> values, double lo, double hi, std::size_t* replaced) {
  if (!(lo < hi)) throw ConfigError("clean_abnormal needs lo < hi");
  std::vector<double> out(values.begin(), values.end());
  double normal = kNaN;
  std::size_t count = 0;
  for (auto& v : out) {
    if (std::isnan(v)) continue;
    if (v >= lo && v <= hi) {
      normal = v;
    } else {
      v = normal;
      ++count;
    }
  }
  if (replaced) *replaced = count;
  return out;
}

std::vector<double> interpolate_gaps(std::span<const double> values, std::size_t max_gap, std::size_t* filled) {
  std::vector<double> out(values.begin(), values.end());
  std::size_t count = 0;
  const std::size_t n = out.size();
  std::size_t i = 0;
  while (i < n) {
    if (!std::isnan(out[i])) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < n && std::isnan(out[i])) ++i;
    const std::size_t gap = i - start;
    if (start == 0 || i == n || gap >= max_gap) continue;
    const double a = out[start - 1], b = out[i];
    for (std::size_t k = 0; k < gap; ++k) {
      out[start + k] = a + (b - a) * static_cast<double>(k + 1) / static_cast<double>(gap + 1);
    }
    count += gap;
  }
  if (filled) *filled = count;
  return out;
}

std::vector<std::uint8_t> flag_issues(std::span<const double> p_agg, const std::vector<NamedSeries>& appliances) {
  for (const auto& a : appliances) {
    if (a.values.size() != p_agg.size()) {
      throw DimensionError("appliance '" + a.name + "' has " + std::to_string(a.values.size()) +
                           " samples, aggregate has " + std::to_string(p_agg.size()));
    }
  }
  std::vector<std::uint8_t> out(p_agg.size(), 0);
  for (std::size_t t = 0; t < p_agg.size(); ++t) {
    double sum = 0.0;
    bool nan = std::isnan(p_agg[t]);
    for (const auto& a : appliances) {
      nan |= std::isnan(a.values[t]);
      sum += a.values[t];
    }
    out[t] = !nan && sum > p_agg[t] ? 1 : 0;
  }
  return out;
}

PreprocessParams PreprocessParams::environmental() {
  PreprocessParams p;
  p.grid_period = 900.0;
  p.max_gap = 4;
  return p;
}

double PreprocessResult::nan_percentage() const {
  std::size_t nan = 0, total = 0;
  for (const auto& c : channels) {
    nan += c.nan_after;
    total += c.samples;
  }
  return total ? 100.0 * static_cast<double>(nan) / static_cast<double>(total) : 0.0;
}

double PreprocessResult::issues_percentage() const {
  return series.size() ? 100.0 * static_cast<double>(issues) / static_cast<double>(series.size()) : 0.0;
}

PreprocessResult preprocess(const HouseholdSeries& series, const std::vector<ApplianceMeta>& metas,
                            const PreprocessParams& params) {
  PreprocessResult r;
  r.series = resample_nearest(series, params.grid_period);
  auto run = [&](const std::string& name, std::vector<double>& v, double lo, double hi) {
    if (v.empty()) return;
    ChannelStats c;
    c.channel = name;
    c.samples = v.size();
    c.nan_after_resample = static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }));
    v = clean_abnormal(v, lo, hi, &c.abnormal);
    v = interpolate_gaps(v, params.max_gap, &c.interpolated);
    c.nan_after = static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }));
    r.channels.push_back(std::move(c));
  };
  const double inf = std::numeric_limits<double>::infinity();
  auto& s = r.series;
  run("V", s.voltage, 0.0, params.voltage_max);
  run("A", s.current, 0.0, params.current_max);
  run("P_agg", s.p_agg, 0.0, params.aggregate_max);
  for (auto& a : s.appliances) {
    double hi = inf;
    if (params.clean_appliances_with_metadata) {
      for (const auto& m : metas)
        if (m.name == a.name) hi = m.max_wattage;
    }
    run(a.name, a.values, 0.0, hi);
  }
  for (auto& e : s.environment) {
    const bool humidity = e.name.find("humidity") != std::string::npos;
    run(e.name, e.values, humidity ? 0.0 : params.temperature_min,
        humidity ? params.humidity_max : params.temperature_max);
  }
  if (!s.p_agg.empty()) {
    s.issues = flag_issues(s.p_agg, s.appliances);
    r.issues = static_cast<std::size_t>(std::count(s.issues.begin(), s.issues.end(), 1));
  }
  return r;
}

nlohmann::json to_json(const PreprocessParams& p) {
  return {{"grid_period", p.grid_period},
          {"max_gap", p.max_gap},
          {"voltage_max", p.voltage_max},
          {"current_max", p.current_max},
          {"aggregate_max", p.aggregate_max},
          {"clean_appliances_with_metadata", p.clean_appliances_with_metadata},
          {"temperature_min", p.temperature_min},
          {"temperature_max", p.temperature_max},
          {"humidity_max", p.humidity_max}};
}

nlohmann::json provenance_json(const PreprocessResult& r, const PreprocessParams& p) {
  nlohmann::json channels = nlohmann::json::array();
  for (const auto& c : r.channels) {
    const double n = c.samples ? static_cast<double>(c.samples) : 1.0;
    channels.push_back({{"channel", c.channel},
                        {"samples", c.samples},
                        {"nan_after_resample", c.nan_after_resample},
                        {"abnormal", c.abnormal},
                        {"interpolated", c.interpolated},
                        {"nan_after", c.nan_after},
                        {"nan_percentage", 100.0 * static_cast<double>(c.nan_after) / n}});
  }
  return {{"parameters", to_json(p)},
          {"samples", r.series.size()},
          {"channels", channels},
          {"nan_percentage", r.nan_percentage()},
          {"issues", r.issues},
          {"issues_percentage", r.issues_percentage()}};
}

WindowDataset windowize(const HouseholdSeries& series, const std::string& appliance, std::size_t window,
                        std::size_t stride, bool drop_nan, std::vector<std::string>* warnings) {
  if (window < 1 || stride < 1) throw ConfigError("windowize needs window >= 1 and stride >= 1");
  const auto& y = series.appliance(appliance);
  const auto& x = series.p_agg;
  if (x.size() != y.size()) throw DimensionError("aggregate and appliance series differ in length");
  WindowDataset d;
  d.window = window;
  d.appliance = appliance;
  const std::size_t n = x.size();
  if (n < window) {
    if (warnings) {
      warnings->push_back("series of " + std::to_string(n) + " samples is shorter than the window of " +
                          std::to_string(window) + "; no windows produced");
    }
    return d;
  }
  for (std::size_t start = 0; start + window <= n; start += stride) {
    bool nan = false;
    for (std::size_t k = start; k < start + window && !nan; ++k) nan = std::isnan(x[k]) || std::isnan(y[k]);
    if (nan) {
      if (drop_nan) continue;
      throw DataError("window starting at sample " + std::to_string(start) + " contains NaN");
    }
    d.x.insert(d.x.end(), x.begin() + static_cast<std::ptrdiff_t>(start),
               x.begin() + static_cast<std::ptrdiff_t>(start + window));
    d.y.insert(d.y.end(), y.begin() + static_cast<std::ptrdiff_t>(start),
               y.begin() + static_cast<std::ptrdiff_t>(start + window));
    ++d.count;
  }
  return d;
}

NormStats compute_norm_stats(const WindowDataset& train, double appliance_max) {
  if (train.x.empty()) throw DataError("normalization statistics need at least one training window");
  if (!(appliance_max > 0.0)) throw ConfigError("appliance max wattage must be > 0");
  const double n = static_cast<double>(train.x.size());
  const double mean = std::accumulate(train.x.begin(), train.x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : train.x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  return {mean, sd > 0.0 ? sd : 1.0, appliance_max};
}

DatasetSplits split_by_house(const std::vector<House>& houses, const ApplianceMeta& meta, const SplitConfig& cfg,
                             std::vector<std::string>* warnings) {
  if (houses.empty()) throw DataError("no houses to split");
  std::set<std::string> test(cfg.test_houses.begin(), cfg.test_houses.end());
  const std::set<std::string> val(cfg.validation_houses.begin(), cfg.validation_houses.end());
  if (test.empty()) {
    if (houses.size() < 2) throw DataError("a house split needs at least two houses");
    test.insert(houses.back().id);
  }
  std::set<std::string> known;
  for (const auto& h : houses) known.insert(h.id);
  for (const auto& id : test)
    if (!known.contains(id)) throw ConfigError("unknown test house '" + id + "'");
  for (const auto& id : val)
    if (!known.contains(id)) throw ConfigError("unknown validation house '" + id + "'");

  const std::size_t eval_stride = cfg.eval_stride ? cfg.eval_stride : cfg.window;
  DatasetSplits s;
  for (auto* d : {&s.train, &s.validation, &s.test}) {
    d->window = cfg.window;
    d->appliance = meta.name;
  }
  s.validation.split = Split::Validation;
  s.test.split = Split::Test;
  for (const auto& h : houses) {
    std::vector<std::string> w;
    if (test.contains(h.id)) {
      s.test.append(windowize(h.series, meta.name, cfg.window, eval_stride, true, &w));
    } else if (val.contains(h.id)) {
      s.validation.append(windowize(h.series, meta.name, cfg.window, eval_stride, true, &w));
    } else {
      s.train.append(windowize(h.series, meta.name, cfg.window, cfg.stride, true, &w));
    }
    if (warnings)
      for (auto& m : w) warnings->push_back(h.id + ": " + m);
  }
  const NormStats stats = compute_norm_stats(s.train, meta.max_wattage);
  s.train.stats = s.validation.stats = s.test.stats = stats;
  return s;
}

TemplateKind template_kind_from_string(const std::string& s) {
  if (s == "two-state") return TemplateKind::TwoState;
  if (s == "multi-state") return TemplateKind::MultiState;
  if (s == "cyclic") return TemplateKind::Cyclic;
  throw ConfigError("unknown appliance template kind '" + s + "'");
}

std::string to_string(TemplateKind k) {
  switch (k) {
    case TemplateKind::TwoState: return "two-state";
    case TemplateKind::MultiState: return "multi-state";
    case TemplateKind::Cyclic: return "cyclic";
  }
  return "";
}

double ApplianceTemplate::max_wattage() const {
  if (kind != TemplateKind::MultiState) return wattage;
  double m = 0.0;
  for (const auto& s : program) m = std::max(m, s.watts);
  return m;
}

ApplianceMeta ApplianceTemplate::meta() const {
  const double top = max_wattage();
  const double thr = on_threshold > 0.0 ? on_threshold : 0.1 * top;
  return {name, top, thr, min_on, min_off};
}

std::vector<ApplianceTemplate> default_templates() {
  ApplianceTemplate kettle;
  kettle.name = "kettle";
  kettle.kind = TemplateKind::TwoState;
  kettle.wattage = 2000.0;
  kettle.events_per_day = 24.0;
  kettle.min_duration = 60.0;
  kettle.max_duration = 180.0;
  kettle.on_threshold = 500.0;
  kettle.min_on = 20.0;
  kettle.min_off = 0.0;

  ApplianceTemplate washer;
  washer.name = "washer";
  washer.kind = TemplateKind::MultiState;
  washer.events_per_day = 1.0;
  washer.program = {{2000.0, 900.0}, {250.0, 1500.0}, {60.0, 300.0}, {450.0, 600.0}};
  washer.on_threshold = 20.0;
  washer.min_on = 300.0;
  washer.min_off = 160.0;

  ApplianceTemplate fridge;
  fridge.name = "fridge";
  fridge.kind = TemplateKind::Cyclic;
  fridge.wattage = 100.0;
  fridge.cycle_period = 2700.0;
  fridge.duty_cycle = 0.35;
  fridge.on_threshold = 50.0;
  fridge.min_on = 60.0;
  fridge.min_off = 12.0;
  return {kettle, washer, fridge};
}

SynthHousehold synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.appliances.empty()) throw ConfigError("synthetic household needs at least one appliance template");
  if (!(cfg.sample_period > 0.0) || !(cfg.days > 0.0)) throw ConfigError("synthetic days and sample_period must be > 0");
  if (!(cfg.noise_sigma >= 0.0) || !(cfg.baseline >= 0.0)) throw ConfigError("baseline and noise_sigma must be >= 0");
  const auto n = static_cast<std::size_t>(std::llround(cfg.days * 86400.0 / cfg.sample_period));
  const double dt = cfg.sample_period;

  SynthHousehold out;
  auto& s = out.series;
  s.sample_period = dt;
  s.timestamps.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.timestamps[i] = cfg.start_epoch + static_cast<double>(i) * dt;

  for (std::size_t a = 0; a < cfg.appliances.size(); ++a) {
    const auto& t = cfg.appliances[a];
    if (t.name.empty()) throw ConfigError("appliance template without a name");
    Rng rng(seed, a + 1);
    std::vector<double> v(n, 0.0);
    auto samples = [&](double seconds) {
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(seconds / dt)));
    };
    switch (t.kind) {
      case TemplateKind::TwoState: {
        if (!(t.min_duration > 0.0 && t.max_duration >= t.min_duration) || !(t.wattage > 0.0)) {
          throw ConfigError("appliance '" + t.name + "': bad two-state template");
        }
        if (t.events_per_day <= 0.0) break;
        const double rate = t.events_per_day / 86400.0;
        double clock = rng.exponential(rate);
        while (true) {
          const auto start = static_cast<std::size_t>(clock / dt);
          if (start >= n) break;
          const std::size_t len = samples(rng.uniform(t.min_duration, t.max_duration));
          const double w = std::round(t.wattage * rng.uniform(0.95, 1.0));
          for (std::size_t k = start; k < std::min(n, start + len); ++k) v[k] = w;
          clock = static_cast<double>(start + len) * dt + rng.exponential(rate);
        }
        break;
      }
      case TemplateKind::MultiState: {
        if (t.program.empty()) throw ConfigError("appliance '" + t.name + "': multi-state template needs a program");
        if (t.events_per_day <= 0.0) break;
        const double rate = t.events_per_day / 86400.0;
        double clock = rng.exponential(rate);
        while (true) {
          auto k = static_cast<std::size_t>(clock / dt);
          if (k >= n) break;
          for (const auto& st : t.program) {
            const std::size_t len = samples(st.seconds * rng.uniform(0.9, 1.1));
            const double w = std::round(st.watts * rng.uniform(0.95, 1.0));
            for (std::size_t e = k + len; k < std::min(n, e); ++k) v[k] = w;
          }
          clock = static_cast<double>(k) * dt + rng.exponential(rate);
        }
        break;
      }
      case TemplateKind::Cyclic: {
        if (!(t.cycle_period > 0.0) || !(t.duty_cycle > 0.0 && t.duty_cycle < 1.0) || !(t.wattage > 0.0)) {
          throw ConfigError("appliance '" + t.name + "': bad cyclic template");
        }
        std::size_t k = static_cast<std::size_t>(rng.uniform(0.0, t.cycle_period) / dt);
        while (k < n) {
          const double period = t.cycle_period * rng.uniform(0.9, 1.1);
          const std::size_t on = samples(period * t.duty_cycle);
          const std::size_t off = samples(period * (1.0 - t.duty_cycle));
          const double w = std::round(t.wattage * rng.uniform(0.9, 1.0));
          for (std::size_t e = k + on; k < std::min(n, e); ++k) v[k] = w;
          k += off;
        }
        break;
      }
    }
    s.appliances.push_back({t.name, std::move(v)});
    out.metas.push_back(t.meta());
    auto params = to_json(t);
    params["seed"] = seed;
    params["baseline"] = cfg.baseline;
    params["noise_sigma"] = cfg.noise_sigma;
    out.parameters.push_back(std::move(params));
  }

  Rng noise(seed, 0);
  s.p_agg.resize(n);
  s.voltage.resize(n);
  s.current.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& a : s.appliances) sum += a.values[i];
    const double e = std::clamp(noise.normal(), -3.0, 3.0) * cfg.noise_sigma;
    s.p_agg[i] = sum + cfg.baseline + e;
    s.voltage[i] = cfg.voltage + std::clamp(noise.normal(), -3.0, 3.0) * cfg.voltage_sigma;
    s.current[i] = s.p_agg[i] / s.voltage[i];
  }
  s.issues = flag_issues(s.p_agg, s.appliances);
  return out;
}

nlohmann::json to_json(const ApplianceTemplate& t) {
  nlohmann::json j = {{"name", t.name},
                      {"kind", to_string(t.kind)},
                      {"on_threshold", t.on_threshold},
                      {"min_on", t.min_on},
                      {"min_off", t.min_off}};
  switch (t.kind) {
    case TemplateKind::TwoState:
      j["wattage"] = t.wattage;
      j["events_per_day"] = t.events_per_day;
      j["min_duration"] = t.min_duration;
      j["max_duration"] = t.max_duration;
      break;
    case TemplateKind::MultiState: {
      j["events_per_day"] = t.events_per_day;
      auto prog = nlohmann::json::array();
      for (const auto& st : t.program) prog.push_back({{"watts", st.watts}, {"seconds", st.seconds}});
      j["program"] = prog;
      break;
    }
    case TemplateKind::Cyclic:
      j["wattage"] = t.wattage;
      j["cycle_period"] = t.cycle_period;
      j["duty_cycle"] = t.duty_cycle;
      break;
  }
  return j;
}

ApplianceTemplate template_from_json(const nlohmann::json& j) {
  static const std::set<std::string> keys = {"name",         "kind",         "wattage",    "events_per_day",
                                             "min_duration", "max_duration", "program",    "cycle_period",
                                             "duty_cycle",   "on_threshold", "min_on",     "min_off"};
  if (!j.is_object()) throw ConfigError("appliance template must be an object");
  for (const auto& [k, v] : j.items())
    if (!keys.contains(k)) throw ConfigError("unknown key '" + k + "' in appliance template");
  ApplianceTemplate t;
  try {
    t.name = j.at("name");
    t.kind = template_kind_from_string(j.at("kind"));
    t.wattage = j.value("wattage", t.wattage);
    t.events_per_day = j.value("events_per_day", t.events_per_day);
    t.min_duration = j.value("min_duration", t.min_duration);
    t.max_duration = j.value("max_duration", t.max_duration);
    t.cycle_period = j.value("cycle_period", t.cycle_period);
    t.duty_cycle = j.value("duty_cycle", t.duty_cycle);
    t.on_threshold = j.value("on_threshold", t.on_threshold);
    t.min_on = j.value("min_on", t.min_on);
    t.min_off = j.value("min_off", t.min_off);
    if (j.contains("program")) {
      for (const auto& st : j["program"]) t.program.push_back({st.at("watts"), st.at("seconds")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("appliance template: ") + e.what());
  }
  return t;
}

}  // namespace nilmprune
