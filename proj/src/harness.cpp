#include "airpath/harness.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "airpath/csv.hpp"
#include "airpath/errors.hpp"
#include "json.hpp"

namespace airpath {
namespace {

StateVector measure(const Plant& plant, const PlantState& s, const ActuatorInput& u,
                    const OperatingPoint& rho) {
  const PlantOutput y = plant.output(s, u, rho);
  return {y.p_im, y.egr_rate};
}

const std::vector<std::string>& log_header() {
  static const std::vector<std::string> h = {
      "t",          "engine_speed", "fuel_rate",    "r_p_im",       "r_egr_rate",
      "p_im",       "egr_rate",     "egr_pos",      "vgt_pos",      "ff_egr_pos",
      "ff_vgt_pos", "du_egr",       "du_vgt",       "eps_p_im",     "eps_egr_rate",
      "status",     "kkt_residual", "active_set",   "solve_time_s", "fallback"};
  return h;
}

double pct_change(double value, double ref) {
  if (ref == 0.0) return value == 0.0 ? 0.0 : std::copysign(HUGE_VAL, value);
  return 100.0 * (value - ref) / ref;
}

}  // namespace

// ---------------------------------------------------------------- tables

StateVector SetpointTables::at(const OperatingPoint& rho) const {
  return {interpolate(lattice, p_im, rho), interpolate(lattice, egr_rate, rho)};
}

void SetpointTables::check_bounds(const Eigen::Vector2d& x_min,
                                  const Eigen::Vector2d& x_max) const {
  for (std::size_t k = 0; k < lattice.size(); ++k) {
    const StateVector r = node(k);
    if ((r.array() < x_min.array()).any() || (r.array() > x_max.array()).any()) {
      const auto rho = lattice.node(k);
      std::ostringstream os;
      os << "set-point at (" << rho.engine_speed << ", " << rho.fuel_rate
         << ") lies outside the state bounds";
      throw InputError(os.str());
    }
  }
}

SetpointTables build_setpoint_tables(const Plant& plant, const Lattice& lattice,
                                     const NominalActuatorMap& nominal) {
  lattice.validate();
  SetpointTables t;
  t.lattice = lattice;
  for (const auto& rho : lattice.nodes()) {
    const auto eq = make_equilibrium(plant, rho, nominal(rho));
    t.p_im.push_back(eq.x_ss[0]);
    t.egr_rate.push_back(eq.x_ss[1]);
  }
  return t;
}

ActuatorInput FeedforwardTable::at(const OperatingPoint& rho) const {
  std::vector<double> egr(u.size()), vgt(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    egr[k] = u[k].egr_pos;
    vgt[k] = u[k].vgt_pos;
  }
  return {interpolate(lattice, egr, rho), interpolate(lattice, vgt, rho)};
}

ActuatorInput invert_equilibrium(const Plant& plant, const OperatingPoint& rho,
                                 const StateVector& target, ActuatorInput start,
                                 double* residual) {
  auto eval = [&](const Eigen::Vector2d& u) -> Eigen::Vector2d {
    const ActuatorInput a{u[0], u[1]};
    const auto s = plant.find_equilibrium(rho, a, ThermalMode::SteadyState);
    return (measure(plant, s, a, rho) - target).cwiseQuotient(target.cwiseAbs().cwiseMax(1e-3));
  };
  Eigen::Vector2d u(start.egr_pos, start.vgt_pos);
  Eigen::Vector2d f = Eigen::Vector2d::Constant(HUGE_VAL);
  try {
    f = eval(u);
    for (int it = 0; it < 40 && f.cwiseAbs().maxCoeff() >= 1e-9; ++it) {
      Eigen::Matrix2d J;
      for (int c = 0; c < 2; ++c) {
        Eigen::Vector2d up = u;
        const double h = (u[c] < 99.0) ? 0.05 : -0.05;
        up[c] += h;
        J.col(c) = (eval(up) - f) / h;
      }
      const Eigen::Vector2d step = -J.fullPivLu().solve(f);
      double alpha = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 12; ++ls, alpha *= 0.5) {
        const Eigen::Vector2d trial = (u + alpha * step).cwiseMax(0.0).cwiseMin(100.0);
        const Eigen::Vector2d ft = eval(trial);
        if (ft.norm() < f.norm()) {
          u = trial;
          f = ft;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
  } catch (const ConvergenceError&) {
  }
  if (residual) *residual = f.cwiseAbs().maxCoeff();
  return {u[0], u[1]};
}

FeedforwardTable build_ff_table(const Plant& plant, const SetpointTables& setpoints,
                                double tolerance) {
  FeedforwardTable table;
  table.lattice = setpoints.lattice;
  std::vector<std::string> failed;
  double worst = 0.0;
  for (std::size_t k = 0; k < setpoints.lattice.size(); ++k) {
    const OperatingPoint rho = setpoints.lattice.node(k);
    double res = 0.0;
    table.u.push_back(invert_equilibrium(plant, rho, setpoints.node(k), {50.0, 50.0}, &res));
    if (!(res <= tolerance)) {
      std::ostringstream os;
      os << "(" << rho.engine_speed << ", " << rho.fuel_rate << ")";
      failed.push_back(os.str());
      worst = std::max(worst, res);
    }
  }
  if (!failed.empty()) {
    std::string msg = "build_ff_table: no feasible feedforward at";
    for (const auto& s : failed) msg += " " + s;
    throw ConvergenceError(msg, worst);
  }
  return table;
}

// ---------------------------------------------------------------- cycles

std::string to_string(CycleKind kind) {
  switch (kind) {
    case CycleKind::StepStaircase: return "staircase";
    case CycleKind::SyntheticUrban: return "urban";
    case CycleKind::SyntheticHighway: return "highway";
  }
  return "?";
}

CycleKind parse_cycle(const std::string& text) {
  std::string s;
  for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "staircase") return CycleKind::StepStaircase;
  if (s == "urban") return CycleKind::SyntheticUrban;
  if (s == "highway") return CycleKind::SyntheticHighway;
  throw InputError("unknown cycle '" + text + "'");
}

CycleOptions CycleOptions::from_config(const Config& cfg) {
  CycleOptions o;
  o.dt = cfg.get_double("harness.dt", o.dt);
  o.max_speed_step = cfg.get_double("harness.max_speed_step", o.max_speed_step);
  o.max_fuel_step = cfg.get_double("harness.max_fuel_step", o.max_fuel_step);
  o.speed_lo = cfg.get_double("harness.speed_lo", o.speed_lo);
  o.speed_hi = cfg.get_double("harness.speed_hi", o.speed_hi);
  o.fuel_lo = cfg.get_double("harness.fuel_lo", o.fuel_lo);
  o.fuel_hi = cfg.get_double("harness.fuel_hi", o.fuel_hi);
  o.staircase_levels = cfg.get_int("harness.staircase_levels", o.staircase_levels);
  return o;
}

DriveCycle make_cycle(CycleKind kind, double duration, std::uint64_t seed,
                      const CycleOptions& o) {
  if (!(duration >= 60.0)) throw InputError("make_cycle: duration must be >= 60 s");
  if (!(o.dt > 0.0) || !(o.speed_lo < o.speed_hi) || !(o.fuel_lo < o.fuel_hi) ||
      o.staircase_levels < 1) {
    throw InputError("make_cycle: invalid options");
  }
  const auto n = static_cast<std::size_t>(std::lround(duration / o.dt));
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const double ds = o.speed_hi - o.speed_lo;
  const double df = o.fuel_hi - o.fuel_lo;

  // Target (speed, fuel) per sample before rate limiting.
  std::vector<OperatingPoint> target(n);
  switch (kind) {
    case CycleKind::StepStaircase: {
      const std::size_t plateau = (n + o.staircase_levels - 1) / o.staircase_levels;
      OperatingPoint level;
      for (std::size_t k = 0; k < n; ++k) {
        if (k % plateau == 0) level = {uniform(o.speed_lo, o.speed_hi), uniform(o.fuel_lo, o.fuel_hi)};
        target[k] = level;
      }
      break;
    }
    case CycleKind::SyntheticUrban: {
      OperatingPoint level{uniform(o.speed_lo, o.speed_lo + 0.5 * ds),
                           uniform(o.fuel_lo, o.fuel_lo + 0.7 * df)};
      std::size_t next = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == next) {
          level = {uniform(o.speed_lo, o.speed_lo + 0.5 * ds),
                   uniform(o.fuel_lo, o.fuel_lo + 0.7 * df)};
          next = k + static_cast<std::size_t>(uniform(2.0, 6.0) / o.dt);
        }
        target[k] = level;
      }
      break;
    }
    case CycleKind::SyntheticHighway: {
      double speed = uniform(o.speed_lo + 0.5 * ds, o.speed_hi);
      double fuel = uniform(o.fuel_lo + 0.3 * df, o.fuel_hi);
      std::size_t next_speed = 0, next_fuel = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == next_speed) {
          speed = uniform(o.speed_lo + 0.5 * ds, o.speed_hi);
          next_speed = k + static_cast<std::size_t>(uniform(15.0, 30.0) / o.dt);
        }
        if (k == next_fuel) {
          fuel = uniform(o.fuel_lo + 0.3 * df, o.fuel_hi);
          next_fuel = k + static_cast<std::size_t>(uniform(4.0, 10.0) / o.dt);
        }
        target[k] = {speed, fuel};
      }
      break;
    }
  }

  DriveCycle c;
  c.name = to_string(kind);
  c.dt = o.dt;
  c.points.resize(n);
  OperatingPoint cur = target.front();
  for (std::size_t k = 0; k < n; ++k) {
    cur.engine_speed += std::clamp(target[k].engine_speed - cur.engine_speed,
                                   -o.max_speed_step, o.max_speed_step);
    cur.fuel_rate +=
        std::clamp(target[k].fuel_rate - cur.fuel_rate, -o.max_fuel_step, o.max_fuel_step);
    c.points[k] = cur;
  }
  return c;
}

DriveCycle constant_cycle(const OperatingPoint& rho, double duration, double dt) {
  DriveCycle c;
  c.name = "constant";
  c.dt = dt;
  c.points.assign(static_cast<std::size_t>(std::lround(duration / dt)), rho);
  return c;
}

// ---------------------------------------------------------------- logs

void SimLog::write_csv(const std::filesystem::path& path) const {
  CsvTable t;
  t.header = log_header();
  t.rows.reserve(records.size());
  for (const auto& r : records) {
    t.rows.push_back({r.t, r.rho.engine_speed, r.rho.fuel_rate, r.target[0], r.target[1],
                      r.x[0], r.x[1], r.u.egr_pos, r.u.vgt_pos, r.u_ff.egr_pos,
                      r.u_ff.vgt_pos, r.du[0], r.du[1], r.slack[0], r.slack[1],
                      static_cast<double>(r.status), r.kkt_residual,
                      static_cast<double>(r.active_constraints), r.solve_seconds,
                      r.fallback ? 1.0 : 0.0});
  }
  airpath::write_csv(path, t);
}

SimLog SimLog::read_csv(const std::filesystem::path& path) {
  const CsvTable t = airpath::read_csv(path);
  std::vector<std::size_t> col;
  for (const auto& name : log_header()) col.push_back(t.column(name));
  SimLog log;
  log.label = path.stem().string();
  for (const auto& row : t.rows) {
    auto v = [&](int i) { return row.at(col[i]); };
    SimRecord r;
    r.t = v(0);
    r.rho = {v(1), v(2)};
    r.target = {v(3), v(4)};
    r.x = {v(5), v(6)};
    r.u = {v(7), v(8)};
    r.u_ff = {v(9), v(10)};
    r.du = {v(11), v(12)};
    r.slack = {v(13), v(14)};
    r.status = static_cast<int>(v(15));
    r.kkt_residual = v(16);
    r.active_constraints = static_cast<int>(v(17));
    r.solve_seconds = v(18);
    r.fallback = v(19) != 0.0;
    log.records.push_back(r);
  }
  if (log.records.size() > 1) log.dt = log.records[1].t - log.records[0].t;
  return log;
}

// ---------------------------------------------------------------- runs

SimLog run_cycle(const Workbench& bench, MpcController* controller, const DriveCycle& cycle,
                 const std::string& label) {
  if (cycle.points.empty()) throw InputError("run_cycle: empty cycle");
  const Plant& plant = bench.plant;
  OperatingPoint rho_prev = cycle.points.front();
  const ActuatorInput ff0 = bench.feedforward.at(rho_prev);
  // settle on the set-points when they are reachable, else on the feedforward
  double res = 0.0;
  ActuatorInput u_prev =
      invert_equilibrium(plant, rho_prev, bench.setpoints.at(rho_prev), ff0, &res);
  if (!(res <= 1e-6)) u_prev = ff0;
  PlantState state = plant.find_equilibrium(rho_prev, u_prev, ThermalMode::SteadyState);
  if (controller) {
    controller->reset();
    controller->prime(measure(plant, state, u_prev, rho_prev), u_prev, ff0);
  }

  SimLog log;
  log.label = label;
  log.dt = cycle.dt;
  log.records.reserve(cycle.points.size());
  for (std::size_t k = 0; k < cycle.points.size(); ++k) {
    const OperatingPoint rho = cycle.points[k];
    SimRecord rec;
    rec.t = static_cast<double>(k) * cycle.dt;
    rec.rho = rho;
    rec.x = measure(plant, state, u_prev, rho_prev);
    rec.target = bench.setpoints.at(rho);
    rec.u_ff = bench.feedforward.at(rho);
    if (controller) {
      rec.u = controller->step(rec.x, rec.target, rho, rec.u_ff);
      const auto& d = controller->diagnostics();
      rec.du = d.du;
      rec.slack = d.slack;
      rec.status = static_cast<int>(d.status);
      rec.kkt_residual = d.kkt_residual;
      rec.active_constraints = d.active_constraints;
      rec.solve_seconds = d.solve_seconds;
      rec.fallback = d.fallback;
    } else {
      rec.u = rec.u_ff.clamped();
      rec.status = -1;
    }
    log.records.push_back(rec);

    const StepResult res = plant.step(state, rec.u, rho, bench.mode, cycle.dt);
    if (res.saturated) {
      std::ostringstream os;
      os << "plant left its envelope at t = " << rec.t << " s";
      throw EnvelopeError(os.str());
    }
    state = res.state;
    u_prev = rec.u;
    rho_prev = rho;
  }
  return log;
}

SimLog run_step_test(const Workbench& bench, MpcController* controller,
                     const OperatingPoint& rho_from, const OperatingPoint& rho_to,
                     double duration, double step_time) {
  if (!bench.plant.in_envelope(rho_from) || !bench.plant.in_envelope(rho_to)) {
    throw InputError("run_step_test: operating point outside the plant envelope");
  }
  DriveCycle c;
  c.name = "step";
  c.dt = 0.02;
  const auto n = static_cast<std::size_t>(std::lround(duration / c.dt));
  const auto k_step = static_cast<std::size_t>(std::lround(step_time / c.dt));
  c.points.resize(n);
  for (std::size_t k = 0; k < n; ++k) c.points[k] = k < k_step ? rho_from : rho_to;
  return run_cycle(bench, controller, c, "step");
}

Experiment make_validation_record(const Workbench& bench, const DriveCycle& cycle,
                                  std::uint64_t seed, double amplitude) {
  if (cycle.points.empty()) throw InputError("make_validation_record: empty cycle");
  const Plant& plant = bench.plant;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Experiment ex;
  ex.rho = cycle.points.front();
  ex.dt = cycle.dt;
  ex.seed = seed;
  OperatingPoint rho_prev = ex.rho;
  ActuatorInput u_prev = bench.feedforward.at(rho_prev);
  PlantState state = plant.find_equilibrium(rho_prev, u_prev, ThermalMode::SteadyState);
  for (const auto& rho : cycle.points) {
    const ActuatorInput ff = bench.feedforward.at(rho);
    const double a = 1.0 + amplitude * unit(rng);
    const double b = 1.0 + amplitude * unit(rng);
    const ActuatorInput u = ActuatorInput{ff.egr_pos * a, ff.vgt_pos * b}.clamped();
    ex.outputs.push_back(measure(plant, state, u_prev, rho_prev));
    ex.actuators.push_back(u);
    ex.rho_series.push_back(rho);
    state = plant.step(state, u, rho, bench.mode, cycle.dt).state;
    u_prev = u;
    rho_prev = rho;
  }
  return ex;
}

// ---------------------------------------------------------------- reports

TrackingReport tracking_report(const std::vector<SimLog>& logs, const std::string& reference,
                               double t_begin, double t_end) {
  if (logs.empty()) throw InputError("tracking_report: no logs");
  const auto& first = logs.front().records;
  TrackingReport rep;
  rep.reference = reference;
  for (const auto& log : logs) {
    if (log.records.size() != first.size()) {
      throw InputError("tracking_report: logs cover different windows");
    }
    for (std::size_t k = 0; k < first.size(); ++k) {
      if (std::abs(log.records[k].t - first[k].t) > 1e-9) {
        throw InputError("tracking_report: logs have different timestamps");
      }
    }
    std::vector<Eigen::Vector2d> err;
    for (const auto& r : log.records) {
      if (r.t >= t_begin && r.t <= t_end) err.push_back((r.x - r.target).cwiseAbs());
    }
    if (err.empty()) throw InputError("tracking_report: empty window");
    ChannelStats st;
    for (const auto& e : err) st.mean_abs += e;
    st.mean_abs /= static_cast<double>(err.size());
    Eigen::Vector2d var = Eigen::Vector2d::Zero();
    for (const auto& e : err) var += (e - st.mean_abs).cwiseAbs2();
    st.std_abs = (var / static_cast<double>(err.size())).cwiseSqrt();
    if (rep.stats.count(log.label)) {
      throw InputError("tracking_report: duplicate label '" + log.label + "'");
    }
    rep.order.push_back(log.label);
    rep.stats[log.label] = st;
  }
  const auto ref = rep.stats.find(reference);
  if (ref == rep.stats.end()) {
    throw InputError("tracking_report: reference '" + reference + "' not among logs");
  }
  for (const auto& [name, st] : rep.stats) {
    Eigen::Vector4d d;
    d << pct_change(st.mean_abs[0], ref->second.mean_abs[0]),
        pct_change(st.mean_abs[1], ref->second.mean_abs[1]),
        pct_change(st.std_abs[0], ref->second.std_abs[0]),
        pct_change(st.std_abs[1], ref->second.std_abs[1]);
    rep.delta_percent[name] = d;
  }
  return rep;
}

std::string TrackingReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "controller" << std::right << std::setw(22)
     << "mean|e_p_im| [bar]" << std::setw(22) << "mean|e_egr_rate|" << std::setw(22)
     << "std|e_p_im| [bar]" << std::setw(22) << "std|e_egr_rate|" << "\n";
  for (const auto& name : order) {
    const auto& st = stats.at(name);
    const auto& d = delta_percent.at(name);
    os << std::left << std::setw(14) << (name == reference ? name + "*" : name) << std::right
       << std::scientific << std::setprecision(4);
    os << std::setw(22) << st.mean_abs[0] << std::setw(22) << st.mean_abs[1] << std::setw(22)
       << st.std_abs[0] << std::setw(22) << st.std_abs[1] << "\n";
    if (name != reference) {
      os << std::left << std::setw(14) << "" << std::right << std::fixed << std::setprecision(1);
      for (int i = 0; i < 4; ++i) {
        std::ostringstream cell;
        cell << "(" << (d[i] >= 0 ? "+" : "") << std::fixed << std::setprecision(1) << d[i]
             << "%)";
        os << std::setw(22) << cell.str();
      }
      os << "\n";
    }
  }
  os << "* reference\n";
  return os.str();
}

std::string TrackingReport::to_json() const {
  nlohmann::json j;
  j["reference"] = reference;
  for (const auto& name : order) {
    const auto& st = stats.at(name);
    const auto& d = delta_percent.at(name);
    j["controllers"][name] = {
        {"mean_abs_err", {st.mean_abs[0], st.mean_abs[1]}},
        {"std_abs_err", {st.std_abs[0], st.std_abs[1]}},
        {"delta_percent", {{"mean", {d[0], d[1]}}, {"std", {d[2], d[3]}}}}};
  }
  return j.dump(2);
}

}  // namespace airpath
