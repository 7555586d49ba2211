#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nilmprune/data.hpp"
#include "nilmprune/errors.hpp"
#include "nilmprune/rng.hpp"
#include "preprocess_fixtures.hpp"

using namespace nilmprune;
using nilmprune::testing::NaN;
using nilmprune::testing::same_series;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("nilmprune_data_" + name);
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

HouseholdSeries series_of(std::vector<double> t, std::vector<double> agg, std::vector<double> app) {
  HouseholdSeries s;
  s.timestamps = std::move(t);
  s.p_agg = std::move(agg);
  s.appliances.push_back({"kettle", std::move(app)});
  s.voltage.assign(s.size(), 230.0);
  s.current.assign(s.size(), 1.0);
  s.issues = flag_issues(s.p_agg, s.appliances);
  return s;
}

SynthConfig small_config(double noise) {
  SynthConfig c;
  c.appliances = default_templates();
  c.days = 0.5;
  c.noise_sigma = noise;
  return c;
}

}  // namespace

TEST_CASE("preprocessing traces") {
  const auto cases = testing::preprocess_traces();
  CHECK(cases.size() >= 20);
  for (const auto& c : cases) {
    INFO(c.name);
    const auto got = c.op == testing::TraceOp::Clean ? clean_abnormal(c.input, c.lo, c.hi)
                                                     : interpolate_gaps(c.input, c.max_gap);
    CHECK(same_series(got, c.expected));
  }
  CHECK_THROWS_AS(clean_abnormal(std::vector<double>{1.0}, 5.0, 5.0), ConfigError);
  CHECK(PreprocessParams{}.max_gap == 3);
  CHECK(PreprocessParams{}.grid_period == 10.0);
  CHECK(PreprocessParams::environmental().max_gap == 4);
  CHECK(PreprocessParams::environmental().grid_period == 900.0);
}

TEST_CASE("cleaning and interpolation properties") {
  Rng rng(11);
  for (int t = 0; t < 300; ++t) {
    std::vector<double> v(40);
    for (auto& x : v) {
      const double u = rng.uniform();
      x = u < 0.2 ? NaN : u < 0.3 ? rng.uniform(3001.0, 9000.0) : rng.uniform(0.0, 3000.0);
    }
    std::size_t replaced = 0;
    const auto c = clean_abnormal(v, 0.0, 3000.0, &replaced);
    std::size_t out_of_range = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isnan(v[i]) && v[i] > 3000.0) ++out_of_range;
      if (!std::isnan(c[i])) CHECK((c[i] >= 0.0 && c[i] <= 3000.0));
      if (std::isnan(v[i])) CHECK(std::isnan(c[i]));
    }
    CHECK(replaced == out_of_range);
    std::size_t filled = 0;
    const auto g = interpolate_gaps(c, 3, &filled);
    std::size_t nan_before = 0, nan_after = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (!std::isnan(c[i])) CHECK(g[i] == c[i]);
      nan_before += std::isnan(c[i]);
      nan_after += std::isnan(g[i]);
    }
    CHECK(nan_before - nan_after == filled);
    CHECK(same_series(interpolate_gaps(g, 3), g));
    CHECK(same_series(clean_abnormal(g, 0.0, 3000.0), g));
  }
}

TEST_CASE("datetime format") {
  CHECK(parse_plegma_datetime("01/01/2022 03:00:00 AM") == 1640995200.0);
  CHECK(parse_plegma_datetime("12/31/2021 12:00:00 PM") == 1640941200.0);
  CHECK(parse_plegma_datetime("01/01/2022 12:00:10 AM") == 1640995200.0 - 3 * 3600 + 10);
  CHECK(format_plegma_datetime(1640995200.0) == "01/01/2022 03:00:00 AM");
  CHECK(format_plegma_datetime(1640941200.0) == "12/31/2021 12:00:00 PM");
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double t = static_cast<double>(rng.uniform_int(0, 2'000'000'000));
    CHECK(parse_plegma_datetime(format_plegma_datetime(t)) == t);
  }
  CHECK_THROWS_AS(parse_plegma_datetime("2022-01-01 00:00:00"), FormatError);
  CHECK_THROWS_AS(parse_plegma_datetime("02/30/2022 01:00:00 AM"), FormatError);
  CHECK_THROWS_AS(parse_plegma_datetime("01/01/2022 13:00:00 PM"), FormatError);
}

TEST_CASE("plegma csv parsing") {
  const auto p = temp_path("min.csv");
  write_text(p, "datetime,P_agg\n01/01/2022 03:00:00 AM,150\n01/01/2022 03:00:10 AM,160\n");
  auto s = parse_plegma_csv(p);
  REQUIRE(s.size() == 2);
  CHECK(s.p_agg == std::vector<double>{150, 160});
  CHECK(s.timestamps[1] - s.timestamps[0] == 10.0);
  CHECK(std::isnan(s.voltage[0]));

  write_text(p, "datetime,V,A,P_agg,kettle,fridge,issues\n"
                "01/01/2022 03:00:00 AM,230,1,abc,0,80,0\n"
                "01/01/2022 03:00:10 AM,231,,2300,2000,85,1\n");
  s = parse_plegma_csv(p);
  CHECK(std::isnan(s.p_agg[0]));
  CHECK(std::isnan(s.current[1]));
  REQUIRE(s.appliances.size() == 2);
  CHECK(s.appliances[0].name == "kettle");
  CHECK(s.appliance("fridge")[1] == 85.0);
  CHECK(s.issues == std::vector<std::uint8_t>{0, 1});

  write_text(p, "datetime,V\n01/01/2022 03:00:00 AM,230\n");
  CHECK_THROWS_WITH_AS(parse_plegma_csv(p), doctest::Contains("P_agg"), FormatError);
  write_text(p, "time,P_agg\n");
  CHECK_THROWS_WITH_AS(parse_plegma_csv(p), doctest::Contains("datetime"), FormatError);
  write_text(p, "datetime,P_agg\n01/01/2022 03:00:10 AM,1\n01/01/2022 03:00:00 AM,1\n");
  CHECK_THROWS_AS(parse_plegma_csv(p), FormatError);
  CHECK_THROWS_AS(parse_plegma_csv(temp_path("does_not_exist.csv")), DataError);

  write_text(p, "datetime,internal_temperature,internal_humidity\n01/01/2022 03:00:00 AM,21.5,40\n");
  const auto env = parse_environmental_csv(p);
  REQUIRE(env.environment.size() == 2);
  CHECK(env.environment[0].values[0] == 21.5);
  CHECK(env.sample_period == 900.0);
  std::filesystem::remove(p);
}

TEST_CASE("plegma csv round trip") {
  auto h = synth_generate(small_config(10.0), 4);
  h.series.p_agg[5] = NaN;
  const auto p = temp_path("rt.csv");
  write_plegma_csv(h.series, p);
  const auto back = parse_plegma_csv(p);
  CHECK(back.timestamps == h.series.timestamps);
  CHECK(same_series(back.p_agg, h.series.p_agg));
  CHECK(back.voltage == h.series.voltage);
  CHECK(back.current == h.series.current);
  REQUIRE(back.appliances.size() == h.series.appliances.size());
  for (std::size_t a = 0; a < back.appliances.size(); ++a) {
    CHECK(back.appliances[a].name == h.series.appliances[a].name);
    CHECK(back.appliances[a].values == h.series.appliances[a].values);
  }
  CHECK(back.issues == h.series.issues);

  const auto mp = temp_path("meta.csv");
  write_appliance_metadata(h.metas, mp, h.parameters);
  const auto metas = read_appliance_metadata(mp);
  REQUIRE(metas.size() == h.metas.size());
  CHECK(metas[0].name == "kettle");
  CHECK(metas[0].on_threshold == h.metas[0].on_threshold);
  CHECK(find_meta(metas, "fridge").max_wattage == 100.0);
  CHECK_THROWS_AS(find_meta(metas, "toaster"), DataError);
  std::filesystem::remove(p);
  std::filesystem::remove(mp);
}

TEST_CASE("nearest resampling") {
  auto s = series_of({0.2, 10.4, 19.8}, {1, 2, 3}, {0, 0, 0});
  auto r = resample_nearest(s, 10.0);
  CHECK(r.timestamps == std::vector<double>{0, 10, 20});
  CHECK(r.p_agg == std::vector<double>{1, 2, 3});

  auto grid = series_of({0, 10, 20, 30}, {5, 6, 7, 8}, {1, 1, 1, 1});
  auto same = resample_nearest(grid, 10.0);
  CHECK(same.timestamps == grid.timestamps);
  CHECK(same.p_agg == grid.p_agg);

  auto hole = series_of({0, 35}, {1, 2}, {0, 0});
  auto h = resample_nearest(hole, 10.0);
  CHECK(h.timestamps == std::vector<double>{0, 10, 20, 30, 40});
  CHECK(same_series(h.p_agg, {1, NaN, NaN, 2, 2}));

  // equidistant samples resolve to the earlier one
  auto tie = series_of({5, 15}, {1, 2}, {0, 0});
  CHECK(same_series(resample_nearest(tie, 10.0).p_agg, {1, 1, 2}));
  // a NaN sample does not shadow a valid neighbor
  auto shadow = series_of({0, 9, 12}, {1, NaN, 3}, {0, 0, 0});
  CHECK(same_series(resample_nearest(shadow, 10.0).p_agg, {1, 3, 3}));

  CHECK_THROWS_AS(resample_nearest(HouseholdSeries{}, 10.0), DataError);
  CHECK_THROWS_AS(resample_nearest(grid, 0.0), ConfigError);
}

TEST_CASE("issue flags") {
  CHECK(flag_issues(std::vector<double>{200}, {{"a", {50}}}) == std::vector<std::uint8_t>{0});
  CHECK(flag_issues(std::vector<double>{200}, {{"a", {150}}, {"b", {100}}}) == std::vector<std::uint8_t>{1});
  CHECK(flag_issues(std::vector<double>{NaN}, {{"a", {300}}}) == std::vector<std::uint8_t>{0});
  CHECK(flag_issues(std::vector<double>{100}, {{"a", {NaN}}}) == std::vector<std::uint8_t>{0});
  CHECK_THROWS_AS(flag_issues(std::vector<double>{1, 2}, {{"a", {1}}}), DimensionError);
  Rng rng(9);
  std::vector<double> agg(500);
  std::vector<NamedSeries> apps = {{"a", std::vector<double>(500)}, {"b", std::vector<double>(500)}};
  for (std::size_t t = 0; t < 500; ++t) {
    agg[t] = rng.uniform() < 0.05 ? NaN : rng.uniform(0.0, 400.0);
    apps[0].values[t] = rng.uniform(0.0, 200.0);
    apps[1].values[t] = rng.uniform() < 0.05 ? NaN : rng.uniform(0.0, 200.0);
  }
  const auto f = flag_issues(agg, apps);
  for (std::size_t t = 0; t < 500; ++t) {
    const double sum = apps[0].values[t] + apps[1].values[t];
    const bool expect = !std::isnan(agg[t]) && !std::isnan(sum) && sum > agg[t];
    CHECK(f[t] == expect);
  }
}

TEST_CASE("windowing") {
  auto make = [](std::size_t n) {
    std::vector<double> t(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<double>(10 * i);
      v[i] = static_cast<double>(i);
    }
    return series_of(t, v, v);
  };
  CHECK(windowize(make(480), "kettle", 480, 240, true).count == 1);
  auto two = windowize(make(720), "kettle", 480, 240, true);
  CHECK(two.count == 2);
  CHECK(two.x[480] == 240.0);
  CHECK(two.y.size() == 960);

  auto s = make(480);
  s.p_agg[100] = NaN;
  CHECK(windowize(s, "kettle", 480, 240, true).count == 0);
  CHECK_THROWS_AS(windowize(s, "kettle", 480, 240, false), DataError);

  std::vector<std::string> warnings;
  CHECK(windowize(make(100), "kettle", 480, 240, true, &warnings).count == 0);
  CHECK(warnings.size() == 1);
  CHECK_THROWS_AS(windowize(make(10), "kettle", 0, 1, true), ConfigError);
  CHECK_THROWS_AS(windowize(make(10), "toaster", 4, 1, true), DataError);

  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 300));
    const auto w = static_cast<std::size_t>(rng.uniform_int(1, 50));
    const auto st = static_cast<std::size_t>(rng.uniform_int(1, 50));
    const auto expect = n < w ? 0 : (n - w) / st + 1;
    CHECK(windowize(make(n), "kettle", w, st, true).count == expect);
  }
}

TEST_CASE("house split keeps test statistics out") {
  auto cfg = small_config(5.0);
  std::vector<House> houses;
  for (std::uint64_t h = 1; h <= 3; ++h) houses.push_back({"house_" + std::to_string(h), synth_generate(cfg, h).series});
  for (auto& v : houses[2].series.p_agg) v += 5000.0;
  const auto meta = default_templates()[0].meta();
  SplitConfig sc;
  sc.window = 64;
  sc.stride = 32;
  auto s = split_by_house(houses, meta, sc);
  CHECK(s.test.count == houses[2].series.size() / 64);
  CHECK(s.train.count == 2 * ((houses[0].series.size() - 64) / 32 + 1));
  CHECK(s.train.stats.input_mean < 1000.0);
  CHECK(s.test.stats.input_mean == s.train.stats.input_mean);
  CHECK(s.test.stats.target_scale == meta.max_wattage);
  CHECK(s.test.split == Split::Test);

  sc.test_houses = {"house_1"};
  sc.validation_houses = {"house_2"};
  s = split_by_house(houses, meta, sc);
  CHECK(s.train.stats.input_mean > 5000.0);
  CHECK(s.validation.count > 0);
  sc.test_houses = {"house_9"};
  CHECK_THROWS_AS(split_by_house(houses, meta, sc), ConfigError);
}

TEST_CASE("synthetic households") {
  auto a = synth_generate(small_config(10.0), 1);
  auto b = synth_generate(small_config(10.0), 1);
  auto c = synth_generate(small_config(10.0), 2);
  CHECK(a.series.p_agg == b.series.p_agg);
  CHECK(a.series.appliances[0].values == b.series.appliances[0].values);
  CHECK(a.series.p_agg != c.series.p_agg);
  CHECK(a.series.size() == 4320);
  REQUIRE(a.metas.size() == 3);
  CHECK(a.metas[0].max_wattage == 2000.0);
  CHECK(a.metas[1].max_wattage == 2000.0);
  CHECK(a.parameters[0]["seed"] == 1);

  const double sigma = 10.0, base = 150.0;
  for (std::size_t t = 0; t < a.series.size(); ++t) {
    double sum = 0.0;
    for (const auto& app : a.series.appliances) sum += app.values[t];
    CHECK(sum <= a.series.p_agg[t] - base + 3 * sigma);
    CHECK(a.series.issues[t] == 0);
  }
  // kettle bursts and fridge cycles show up within half a day
  for (std::size_t k : {0u, 2u}) {
    double on = 0.0;
    for (double v : a.series.appliances[k].values) on += v > 0.0;
    CHECK(on > 0.0);
  }

  auto quiet = synth_generate(small_config(0.0), 3);
  for (std::size_t t = 0; t < quiet.series.size(); ++t) {
    double sum = 0.0;
    for (const auto& app : quiet.series.appliances) sum += app.values[t];
    CHECK(quiet.series.p_agg[t] - base == sum);
  }

  auto idle_cfg = small_config(0.0);
  idle_cfg.appliances = {default_templates()[0]};
  idle_cfg.appliances[0].events_per_day = 0.0;
  auto idle = synth_generate(idle_cfg, 5);
  for (double v : idle.series.p_agg) CHECK(v == base);

  CHECK_THROWS_AS(synth_generate(SynthConfig{}, 1), ConfigError);
  for (const auto& t : default_templates()) {
    const auto back = template_from_json(to_json(t));
    CHECK(to_json(back) == to_json(t));
  }
  CHECK_THROWS_AS(template_from_json({{"name", "x"}, {"kind", "two-state"}, {"colour", 1}}), ConfigError);
}

TEST_CASE("preprocessing pipeline") {
  auto h = synth_generate(small_config(10.0), 7);
  auto clean = preprocess(h.series, h.metas, PreprocessParams{});
  for (const auto& c : clean.channels) {
    INFO(c.channel);
    CHECK(c.abnormal == 0);
    CHECK(c.nan_after == 0);
  }
  CHECK(clean.series.p_agg == h.series.p_agg);
  CHECK(clean.issues == 0);

  // spike a sample whose predecessor has the same reading, so the repair is exact
  const auto& kettle = h.series.appliances[0].values;
  std::size_t spike = 100;
  while (kettle[spike - 1] != kettle[spike]) ++spike;
  // holes go where no appliance switches, so interpolation cannot undershoot a load
  auto steady = [&](std::size_t from, std::size_t len) {
    for (;; ++from) {
      bool ok = true;
      for (const auto& a : h.series.appliances)
        for (std::size_t i = from; i <= from + len; ++i) ok = ok && a.values[i] == a.values[from - 1];
      if (ok) return from;
    }
  };
  const std::size_t short_hole = steady(200, 2), long_hole = steady(short_hole + 100, 4);
  auto spiked = h.series;
  spiked.appliances[0].values[spike] = 9999.0;
  // 20 s hole (two missing samples) and 40 s hole (four missing samples)
  spiked.p_agg[short_hole] = spiked.p_agg[short_hole + 1] = NaN;
  for (std::size_t i = long_hole; i < long_hole + 4; ++i) spiked.p_agg[i] = NaN;
  auto r = preprocess(spiked, h.metas, PreprocessParams{});
  CHECK(r.channels[3].channel == "kettle");
  CHECK(r.channels[3].abnormal == 1);
  CHECK(r.series.appliances[0].values[spike] == kettle[spike]);
  CHECK(r.channels[2].interpolated == 2);
  CHECK(!std::isnan(r.series.p_agg[short_hole]));
  CHECK(std::isnan(r.series.p_agg[long_hole + 1]));
  CHECK(r.channels[2].nan_after == 4);

  auto again = preprocess(r.series, h.metas, PreprocessParams{});
  CHECK(same_series(again.series.p_agg, r.series.p_agg));
  CHECK(again.series.appliances[0].values == r.series.appliances[0].values);
  for (const auto& c : again.channels) CHECK(c.abnormal == 0);

  const auto j = provenance_json(r, PreprocessParams{});
  CHECK(j["parameters"]["max_gap"] == 3);
  CHECK(j["nan_percentage"].get<double>() > 0.0);
  CHECK(j["issues_percentage"] == 0.0);
}
