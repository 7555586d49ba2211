#include "nilmprune/threshold.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "internal/csv.hpp"
#include "nilmprune/compression.hpp"
#include "nilmprune/errors.hpp"

namespace nilmprune {

namespace {

constexpr const char* kCurveHeader = "threshold,f1,mae,smape,mre,params,macs,size_bytes,error";

double parse_double(const std::string& s, const std::string& what) {
  if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("cannot parse " + what + " '" + s + "'");
  }
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("cannot parse " + what + " '" + s + "'");
  }
}

double snap(double v) { return std::round(v * 1e9) / 1e9; }

}  // namespace

const SweepPoint* SweepCurve::baseline() const {
  for (const auto& p : points)
    if (p.threshold == 0.0) return &p;
  return nullptr;
}

CompressionAxis compression_axis_from_string(const std::string& s) {
  if (s == "pruned-fraction") return CompressionAxis::PrunedFraction;
  if (s == "normalized-macs-reduction") return CompressionAxis::NormalizedMacsReduction;
  throw ConfigError("unknown compression axis '" + s + "'");
}

std::string to_string(CompressionAxis a) {
  return a == CompressionAxis::PrunedFraction ? "pruned-fraction" : "normalized-macs-reduction";
}

std::vector<double> default_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 19; ++k) g.push_back(static_cast<double>(5 * k) / 100.0);
  return g;
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  if (parts.size() != 3) throw ConfigError("grid must look like A:B:STEP, got '" + spec + "'");
  double a, b, step;
  try {
    a = parse_double(parts[0], "grid start");
    b = parse_double(parts[1], "grid end");
    step = parse_double(parts[2], "grid step");
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  if (!(step > 0.0) || !(b >= a)) throw ConfigError("grid needs STEP > 0 and B >= A: '" + spec + "'");
  const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9)) + 1;
  std::vector<double> g;
  for (std::size_t i = 0; i < n; ++i) g.push_back(snap(a + static_cast<double>(i) * step));
  return g;
}

SweepCurve sweep(std::vector<double> thresholds, const std::function<SweepPoint(double)>& run_point,
                 const SweepOptions& opts) {
  for (double& t : thresholds) {
    if (!(t >= 0.0 && t <= kMaxSparsity + 1e-9)) {
      std::ostringstream os;
      os << "threshold " << t << " outside [0, " << kMaxSparsity << "]";
      throw RangeError(os.str());
    }
    t = std::min(snap(t), kMaxSparsity);
  }
  thresholds.push_back(0.0);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  SweepCurve curve;
  curve.points.resize(thresholds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < thresholds.size(); i = next++) {
      SweepPoint p;
      try {
        p = run_point(thresholds[i]);
      } catch (const std::exception& e) {
        p = SweepPoint{};
        p.f1 = std::numeric_limits<double>::quiet_NaN();
        p.error = e.what();
        if (p.error.empty()) p.error = "unknown failure";
      }
      p.threshold = thresholds[i];
      curve.points[i] = std::move(p);
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(opts.threads, thresholds.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < n; ++k) pool.emplace_back(worker);
  }
  return curve;
}

double compression_coordinate(const SweepCurve& curve, const SweepPoint& p, CompressionAxis axis) {
  if (axis == CompressionAxis::PrunedFraction) return p.threshold;
  const SweepPoint* base = curve.baseline();
  if (!base || base->macs == 0) {
    throw DataError("normalized MACs axis needs a baseline point with nonzero MACs");
  }
  return 1.0 - static_cast<double>(p.macs) / static_cast<double>(base->macs);
}

ThresholdChoice optimal_threshold(const SweepCurve& curve, CompressionAxis axis) {
  if (curve.points.empty()) throw DataError("optimal threshold of an empty curve");
  ThresholdChoice best;
  bool found = false;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const auto& p = curve.points[i];
    if (p.failed() || std::isnan(p.f1)) continue;
    const double dx = 1.0 - p.f1;
    const double dy = 1.0 - compression_coordinate(curve, p, axis);
    const double d = std::sqrt(dx * dx + dy * dy);
    if (!found || d < best.distance || (d == best.distance && p.threshold > best.threshold)) {
      best = {p.threshold, d, i};
      found = true;
    }
  }
  if (!found) throw NumericError("every point of the curve has a NaN F1");
  return best;
}

void write_curve_csv(const SweepCurve& curve, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << kCurveHeader << '\n';
  f.precision(17);
  for (const auto& p : curve.points) {
    f << p.threshold << ',' << p.f1 << ',' << p.mae << ',' << p.smape << ',' << p.mre << ','
      << p.params << ',' << p.macs << ',' << p.size_bytes << ',' << csv::quote(p.error) << '\n';
  }
  if (!f) throw DataError("failed writing " + path.string());
}

SweepCurve read_curve_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open curve file " + path.string());
  std::string line;
  if (!std::getline(f, line) || csv::split(line).size() != 9 || line.rfind("threshold,", 0) != 0) {
    throw FormatError(path.string() + ": expected header '" + kCurveHeader + "'");
  }
  SweepCurve c;
  std::size_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    const auto v = csv::split(line);
    if (v.size() != 9) {
      throw FormatError(path.string() + ":" + std::to_string(row) + ": expected 9 fields");
    }
    SweepPoint p;
    p.threshold = parse_double(v[0], "threshold");
    p.f1 = parse_double(v[1], "f1");
    p.mae = parse_double(v[2], "mae");
    p.smape = parse_double(v[3], "smape");
    p.mre = parse_double(v[4], "mre");
    p.params = parse_u64(v[5], "params");
    p.macs = parse_u64(v[6], "macs");
    p.size_bytes = parse_u64(v[7], "size_bytes");
    p.error = v[8];
    c.points.push_back(std::move(p));
  }
  return c;
}

nlohmann::json to_json(const SweepCurve& curve) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : curve.points) {
    nlohmann::json j = {{"threshold", p.threshold}, {"mae", p.mae},     {"smape", p.smape},
                        {"mre", p.mre},             {"params", p.params}, {"macs", p.macs},
                        {"size_bytes", p.size_bytes}};
    j["f1"] = std::isnan(p.f1) ? nlohmann::json(nullptr) : nlohmann::json(p.f1);
    if (p.failed()) j["error"] = p.error;
    pts.push_back(std::move(j));
  }
  return {{"strategy", curve.strategy}, {"appliance", curve.appliance}, {"points", pts}};
}

SweepCurve curve_from_json(const nlohmann::json& j) {
  SweepCurve c;
  try {
    c.strategy = j.at("strategy");
    c.appliance = j.at("appliance");
    for (const auto& pj : j.at("points")) {
      SweepPoint p;
      p.threshold = pj.at("threshold");
      p.f1 = pj.at("f1").is_null() ? std::numeric_limits<double>::quiet_NaN() : pj.at("f1").get<double>();
      p.mae = pj.at("mae");
      p.smape = pj.at("smape");
      p.mre = pj.at("mre");
      p.params = pj.at("params");
      p.macs = pj.at("macs");
      p.size_bytes = pj.at("size_bytes");
      if (pj.contains("error")) p.error = pj["error"];
      c.points.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sweep curve: ") + e.what());
  }
  return c;
}

}  // namespace nilmprune
