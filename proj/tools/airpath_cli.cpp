#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "airpath/calib.hpp"
#include "airpath/errors.hpp"
#include "airpath/plot.hpp"
#include "airpath/setup.hpp"

namespace fs = std::filesystem;
using namespace airpath;

namespace {

// acceptance thresholds for step tests
constexpr double kMaxResponseTime = 2.0;
constexpr double kMaxOvershoot = 0.05;

constexpr int kExitUnmet = 2;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = "out";
  bool check = false;
};

Setup setup_from(const Common& c) {
  const Config cfg = load_config(c.config.empty() ? std::nullopt
                                                  : std::optional<fs::path>(c.config));
  const auto seed =
      c.seed_given ? c.seed : static_cast<std::uint64_t>(cfg.get_int("sysid.seed", 1));
  fs::create_directories(c.out);
  return make_setup(cfg, seed);
}

fs::path model_path(const Common& c, ModelVariant v) {
  return fs::path(c.out) / ("model_" + to_string(v) + ".json");
}
fs::path regions_path(const Common& c, ModelVariant v) {
  return fs::path(c.out) / ("regions_" + to_string(v) + ".json");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::vector<ModelVariant> model_variants(const std::vector<std::string>& names) {
  std::vector<ModelVariant> out;
  for (const auto& n : names) {
    if (n == "ff") continue;
    out.push_back(parse_variant(n));
  }
  return out;
}

/// Tuned region weights for the variant when present, else the config weights.
WeightSchedule weights_for(const Common& c, const Setup& s, ModelVariant v, bool* tuned) {
  const auto path = regions_path(c, v);
  if (fs::exists(path)) {
    if (tuned) *tuned = true;
    return RegionMap::load(path).schedule(s.mpc.weights);
  }
  if (tuned) *tuned = false;
  const MpcWeights w = s.mpc.weights;
  return [w](const OperatingPoint&) { return w; };
}

// ---------------------------------------------------------------- identify

int cmd_identify(const Common& c, const std::vector<std::string>& variants) {
  const Setup s = setup_from(c);
  for (const auto v : model_variants(variants)) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = build_lpv_variant(s.bench.plant, v, s.lattice, s.identification);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.model.save(model_path(c, v));
    result.model.write_lattice_csv(fs::path(c.out) / ("lattice_" + to_string(v) + ".csv"));

    CsvTable report;
    report.header = {"engine_speed", "fuel_rate",    "rss",          "spectral_radius_raw",
                     "stabilized",   "clipped",      "val_mean_p_im", "val_mean_egr_rate",
                     "val_std_p_im", "val_std_egr_rate"};
    for (const auto& p : result.points) {
      report.rows.push_back({p.rho.engine_speed, p.rho.fuel_rate, p.fit.residual_sum_of_squares,
                             p.fit.spectral_radius_raw, p.fit.stabilized ? 1.0 : 0.0,
                             static_cast<double>(p.clipped), p.validation.mean_abs_err[0],
                             p.validation.mean_abs_err[1], p.validation.std_abs_err[0],
                             p.validation.std_abs_err[1]});
    }
    write_csv(fs::path(c.out) / ("identify_" + to_string(v) + ".csv"), report);
    int stabilized = 0;
    for (const auto& p : result.points) stabilized += p.fit.stabilized;
    std::printf("variant %s: %zu nodes identified in %.2f s, %d stabilized -> %s\n",
                to_string(v).c_str(), result.points.size(), secs, stabilized,
                model_path(c, v).string().c_str());
  }
  return 0;
}

// ---------------------------------------------------------------- validate

int cmd_validate(const Common& c, int cycles, double duration) {
  const Setup s = setup_from(c);
  const double span = duration > 0 ? duration : s.identification.validation_seconds;
  std::vector<Experiment> records;
  for (int i = 0; i < cycles; ++i) {
    const auto seed = derive_seed(s.identification.seed, 0x7661, static_cast<std::uint64_t>(i));
    const auto cycle = make_cycle(CycleKind::SyntheticUrban, span, seed, s.cycles);
    records.push_back(make_validation_record(s.bench, cycle, derive_seed(seed, 1)));
  }

  nlohmann::json js;
  std::ostringstream text;
  text << "Open-loop validation on the Transient plant, " << cycles << " x " << span
       << " s urban records\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %14s %14s %14s %14s\n", "model", "mean|e_p_im|",
                "std|e_p_im|", "mean|e_egr|", "std|e_egr|");
  text << line;
  std::map<std::string, ValidationReport> reports;
  for (const auto v : {ModelVariant::A, ModelVariant::B, ModelVariant::C}) {
    const LpvModel model = obtain_model(s, v, model_path(c, v));
    std::vector<StateVector> pred, meas;
    for (const auto& ex : records) {
      const auto p = simulate_model(model, ex);
      pred.insert(pred.end(), p.begin() + 1, p.end());
      meas.insert(meas.end(), ex.outputs.begin() + 1, ex.outputs.end());
    }
    const auto r = error_metrics(pred, meas);
    reports[to_string(v)] = r;
    std::snprintf(line, sizeof line, "%-8s %14.6g %14.6g %14.6g %14.6g\n", to_string(v).c_str(),
                  r.mean_abs_err[0], r.std_abs_err[0], r.mean_abs_err[1], r.std_abs_err[1]);
    text << line;
    js[to_string(v)] = {{"mean_abs_p_im", r.mean_abs_err[0]},
                        {"std_abs_p_im", r.std_abs_err[0]},
                        {"mean_abs_egr_rate", r.mean_abs_err[1]},
                        {"std_abs_egr_rate", r.std_abs_err[1]}};
  }
  const double a = reports["A"].mean_abs_err[0];
  for (const char* v : {"B", "C"}) {
    const double d = 100.0 * (reports[v].mean_abs_err[0] - a) / a;
    std::snprintf(line, sizeof line, "%s vs A, mean |e_p_im|: %+.1f %%\n", v, d);
    text << line;
  }
  std::cout << text.str();
  write_text(fs::path(c.out) / "validation.txt", text.str());
  write_text(fs::path(c.out) / "validation.json", js.dump(2));

  const bool ok = reports["B"].mean_abs_err[0] < a && reports["C"].mean_abs_err[0] < a;
  if (c.check) {
    std::printf("check: B and C below A on p_im: %s\n", ok ? "pass" : "FAIL");
    if (!ok) return kExitUnmet;
  }
  return 0;
}

// ---------------------------------------------------------------- tune

bool meets_acceptance(const PointMetrics& m) {
  for (const auto* ch : {&m.p_im, &m.egr_rate}) {
    if (!ch->reached || ch->response_time_90 > kMaxResponseTime || ch->overshoot > kMaxOvershoot)
      return false;
  }
  return true;
}

int cmd_tune(const Common& c, const std::vector<std::string>& variants) {
  const Setup s = setup_from(c);
  bool all_ok = true;
  for (const auto v : model_variants(variants)) {
    const LpvModel model = obtain_model(s, v, model_path(c, v));
    const RegionMap map = assign_regions(s.lattice, s.bench.setpoints.egr_rate);
    for (const auto& w : map.warnings) std::printf("note: %s\n", w.c_str());
    const auto tuning = tune_regions(s.bench, model, s.mpc, map, s.calib);
    tuning.map.save(regions_path(c, v));
    std::printf("variant %s regions -> %s\n", to_string(v).c_str(),
                regions_path(c, v).string().c_str());
    std::printf("  %-6s %-13s %-14s %7s %7s %7s %7s  %s\n", "region", "point", "Q_e", "t90_p",
                "os_p", "t90_x", "os_x", "status");
    for (const auto& [id, r] : tuning.results) {
      r.write_trace_csv(fs::path(c.out) /
                        ("tune_" + to_string(v) + "_region" + std::to_string(id) + ".csv"));
      const bool ok = meets_acceptance(r.metrics);
      all_ok = all_ok && ok;
      char point[32], q[32];
      std::snprintf(point, sizeof point, "%g/%g", r.rho.engine_speed, r.rho.fuel_rate);
      std::snprintf(q, sizeof q, "%.3g,%.3g", r.weights.Q_e(0, 0), r.weights.Q_e(1, 1));
      std::printf("  %-6d %-13s %-14s %7.2f %7.3f %7.2f %7.3f  %s\n", id, point, q,
                  r.metrics.p_im.response_time_90, r.metrics.p_im.overshoot,
                  r.metrics.egr_rate.response_time_90, r.metrics.egr_rate.overshoot,
                  ok ? "ok" : "unmet");
      if (!r.met) std::printf("         %s\n", r.unmet.c_str());
    }
  }
  if (c.check && !all_ok) {
    std::printf("check: some region misses t90 <= %.1f s / overshoot <= %.0f %%\n",
                kMaxResponseTime, 100 * kMaxOvershoot);
    return kExitUnmet;
  }
  return 0;
}

// ---------------------------------------------------------------- step

int cmd_step(const Common& c, const std::vector<std::string>& variants, double speed,
             double fuel, double fuel_step, double duration) {
  const Setup s = setup_from(c);
  const OperatingPoint lo{speed, fuel - fuel_step / 2};
  const OperatingPoint hi{speed, fuel + fuel_step / 2};
  const int k_step = static_cast<int>(std::lround(1.0 / s.mpc.dt));
  bool all_ok = true;

  for (const auto& name : variants) {
    std::optional<LpvModel> model;
    std::optional<MpcController> ctl;
    bool tuned = false;
    if (name != "ff") {
      const auto v = parse_variant(name);
      model.emplace(obtain_model(s, v, model_path(c, v)));
      ctl.emplace(*model, s.mpc, weights_for(c, s, v, &tuned));
    }
    for (const auto& [dir, from, to] :
         {std::tuple{"tipin", lo, hi}, std::tuple{"tipout", hi, lo}}) {
      const SimLog log =
          run_step_test(s.bench, ctl ? &*ctl : nullptr, from, to, duration);
      log.write_csv(fs::path(c.out) / ("step_" + name + "_" + dir + ".csv"));
      std::printf("%-3s %-6s%s", name.c_str(), dir, tuned ? " (region weights)" : "");
      for (int ch = 0; ch < 2; ++ch) {
        std::vector<double> traj;
        for (std::size_t k = k_step; k < log.records.size(); ++k) traj.push_back(log.records[k].x[ch]);
        const double initial = log.records[k_step - 1].target[ch];
        const double target = log.records.back().target[ch];
        const char* label = ch == 0 ? "p_im" : "egr_rate";
        try {
          const auto m = measure_step_metrics(traj, log.dt, initial, target);
          const bool ok = m.response_time_90 <= kMaxResponseTime && m.overshoot <= kMaxOvershoot;
          all_ok = all_ok && ok;
          std::printf("  %s t90 %.2f s os %.1f %%", label, m.response_time_90, 100 * m.overshoot);
        } catch (const SettleError&) {
          all_ok = false;
          std::printf("  %s not settled", label);
        }
      }
      std::printf("\n");
    }
  }
  if (c.check && !all_ok) return kExitUnmet;
  return 0;
}

// ---------------------------------------------------------------- cycle

int cmd_cycle(const Common& c, const std::vector<std::string>& variants, const std::string& kind,
              double duration) {
  const Setup s = setup_from(c);
  const CycleKind ck = parse_cycle(kind);
  const auto cycle =
      make_cycle(ck, duration, derive_seed(s.identification.seed, 0x6379), s.cycles);

  std::vector<SimLog> logs;
  double step_time = 0.0;
  std::size_t steps = 0;
  for (const auto& name : variants) {
    std::optional<LpvModel> model;
    std::optional<MpcController> ctl;
    bool tuned = false;
    if (name != "ff") {
      const auto v = parse_variant(name);
      model.emplace(obtain_model(s, v, model_path(c, v)));
      ctl.emplace(*model, s.mpc, weights_for(c, s, v, &tuned));
    }
    const auto t0 = std::chrono::steady_clock::now();
    SimLog log = run_cycle(s.bench, ctl ? &*ctl : nullptr, cycle, name);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    int fallbacks = 0;
    for (const auto& r : log.records) {
      fallbacks += r.fallback;
      if (ctl) step_time += r.solve_seconds;
    }
    if (ctl) steps += log.records.size();
    log.write_csv(fs::path(c.out) / ("cycle_" + kind + "_" + name + ".csv"));
    std::printf("%-3s %s cycle %.0f s simulated in %.1f s%s, %d QP fallbacks\n", name.c_str(),
                kind.c_str(), cycle.duration(), secs, tuned ? " (region weights)" : "",
                fallbacks);
    logs.push_back(std::move(log));
  }

  const std::string ref =
      std::find(variants.begin(), variants.end(), "A") != variants.end() ? "A" : variants.front();
  const auto report = tracking_report(logs, ref);
  std::cout << report.to_text();
  if (steps) std::printf("mean MPC step time %.3f ms\n", 1e3 * step_time / steps);
  write_text(fs::path(c.out) / ("report_" + kind + ".txt"), report.to_text());
  write_text(fs::path(c.out) / ("report_" + kind + ".json"), report.to_json());

  if (c.check) {
    bool ok = true;
    const auto& st = report.stats;
    auto mean = [&](const std::string& n, int ch) { return st.at(n).mean_abs[ch]; };
    if (st.count("A")) {
      for (const char* v : {"B", "C"})
        if (st.count(v) && mean(v, 0) > mean("A", 0)) ok = false;
    }
    if (st.count("ff")) {
      for (const auto& [n, _] : st)
        if (n != "ff" && (mean("ff", 0) <= mean(n, 0) || mean("ff", 1) <= mean(n, 1))) ok = false;
    }
    std::printf("check: controller ordering %s\n", ok ? "pass" : "FAIL");
    if (!ok) return kExitUnmet;
  }
  return 0;
}

// ---------------------------------------------------------------- plot

int cmd_plot(const Common& c, const std::vector<std::string>& inputs, std::string output) {
  std::vector<std::pair<std::string, CsvTable>> logs;
  for (const auto& in : inputs) logs.emplace_back(fs::path(in).stem().string(), read_csv(in));
  if (output.empty()) {
    fs::create_directories(c.out);
    output = (fs::path(c.out) / (fs::path(inputs.front()).stem().string() + ".svg")).string();
  }
  write_svg(output, simlog_panels(logs), "time [s]");
  std::printf("wrote %s\n", output.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LPV model predictive airpath control toolchain"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "configuration file overriding the defaults")
        ->check(CLI::ExistingFile);
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& v) { common.seed = v, common.seed_given = true; },
        "base seed for every random experiment");
    sub->add_option("--out", common.out, "output directory")->capture_default_str();
    sub->add_flag("--check", common.check, "exit 2 when acceptance thresholds are unmet");
  };
  const std::vector<std::string> variant_names{"A", "B", "C", "ff"};

  std::vector<std::string> variants;
  std::string cycle = "urban";
  double duration = 600.0;
  double speed = 2000.0, fuel = 30.0, fuel_step = 10.0;
  int cycles = 3;
  std::vector<std::string> inputs;
  std::string output;

  auto* identify = app.add_subcommand("identify", "identify LPV models per variant");
  add_common(identify);
  identify->add_option("--variant", variants, "A, B or C (repeatable; default all)")
      ->check(CLI::IsMember({"A", "B", "C"}));

  auto* validate = app.add_subcommand("validate", "open-loop model accuracy report");
  add_common(validate);
  validate->add_option("--cycles", cycles, "number of validation records")->capture_default_str();
  validate->add_option("--duration", duration, "seconds per record (default sysid setting)");

  auto* tune = app.add_subcommand("tune", "region-wise weight calibration");
  add_common(tune);
  tune->add_option("--variant", variants, "A, B or C (repeatable; default all)")
      ->check(CLI::IsMember({"A", "B", "C"}));

  auto* step = app.add_subcommand("step", "tip-in and tip-out step tests");
  add_common(step);
  step->add_option("--variant", variants, "A, B, C or ff (repeatable; default all)")
      ->check(CLI::IsMember(variant_names));
  step->add_option("--speed", speed, "engine speed [rpm]")->capture_default_str();
  step->add_option("--fuel", fuel, "centre fuel rate [mm3/cycle]")->capture_default_str();
  step->add_option("--fuel-step", fuel_step, "tip-in size [mm3/cycle]")->capture_default_str();
  double step_duration = 12.0;
  step->add_option("--duration", step_duration, "seconds per test")->capture_default_str();

  auto* cyc = app.add_subcommand("cycle", "drive-cycle runs and tracking report");
  add_common(cyc);
  cyc->add_option("--variant", variants, "A, B, C or ff (repeatable; default all)")
      ->check(CLI::IsMember(variant_names));
  cyc->add_option("--cycle", cycle, "staircase, urban or highway")
      ->check(CLI::IsMember({"staircase", "urban", "highway"}))
      ->capture_default_str();
  cyc->add_option("--duration", duration, "seconds")->capture_default_str();

  auto* plot = app.add_subcommand("plot", "SimLog CSV files to an SVG figure");
  add_common(plot);
  plot->add_option("inputs", inputs, "SimLog CSV files")->required()->check(CLI::ExistingFile);
  plot->add_option("-o,--output", output, "SVG path (default <out>/<first input>.svg)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (identify->parsed()) {
      if (variants.empty()) variants = {"A", "B", "C"};
      return cmd_identify(common, variants);
    }
    if (validate->parsed()) return cmd_validate(common, cycles, validate->count("--duration") ? duration : 0.0);
    if (tune->parsed()) {
      if (variants.empty()) variants = {"A", "B", "C"};
      return cmd_tune(common, variants);
    }
    if (step->parsed()) {
      if (variants.empty()) variants = variant_names;
      return cmd_step(common, variants, speed, fuel, fuel_step, step_duration);
    }
    if (cyc->parsed()) {
      if (variants.empty()) variants = {"ff", "A", "B", "C"};
      return cmd_cycle(common, variants, cycle, duration);
    }
    if (plot->parsed()) return cmd_plot(common, inputs, output);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
