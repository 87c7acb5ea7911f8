#include "airpath/plant.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "airpath/csv.hpp"
#include "airpath/errors.hpp"

namespace airpath {
namespace {

constexpr double kGasConstant = 287.0;  // J/(kg K)
constexpr double kCpAir = 1005.0;
constexpr double kCpExhaust = 1150.0;
constexpr double kGammaAir = 1.4;
constexpr double kGammaExhaust = 1.33;
constexpr double kPaPerBar = 1.0e5;
constexpr double kMinTurboSpeed = 0.05;
constexpr double kMinPressure = 0.3;  // bar
constexpr double kMaxTurboSpeed = 2.0;

// Isentropic orifice flow function with choking below the critical ratio.
double flow_function(double pressure_ratio, double gamma) {
  const double critical = std::pow(2.0 / (gamma + 1.0), gamma / (gamma - 1.0));
  const double pr = std::clamp(pressure_ratio, critical, 1.0);
  const double v = 2.0 * gamma / (gamma - 1.0) *
                   (std::pow(pr, 2.0 / gamma) - std::pow(pr, (gamma + 1.0) / gamma));
  return std::sqrt(std::max(v, 0.0));
}

}  // namespace

ActuatorInput ActuatorInput::clamped() const {
  return {std::clamp(egr_pos, 0.0, 100.0), std::clamp(vgt_pos, 0.0, 100.0)};
}

double egr_rate(double w_egr, double w_thr) {
  if (w_egr < 0.0 || w_thr < 0.0) {
    throw InputError("egr_rate: mass flows must be non-negative");
  }
  const double total = w_egr + w_thr;
  if (!(total > 0.0)) {
    throw DegenerateInputError("egr_rate: total intake flow is zero");
  }
  return w_egr / total;
}

PlantParams PlantParams::from_config(const Config& cfg) {
  PlantParams p;
  auto read = [&cfg](const char* name, double& field) {
    const std::string key = name;
    if (cfg.contains("plant." + key)) {
      field = cfg.get_double("plant." + key, field);
    } else {
      field = cfg.get_double(key, field);
    }
  };
  read("p_amb", p.p_amb);
  read("T_amb", p.T_amb);
  read("T_im", p.T_im);
  read("displacement", p.displacement);
  double cyl = p.cylinders;
  read("cylinders", cyl);
  p.cylinders = static_cast<int>(cyl);
  read("V_im", p.V_im);
  read("V_em", p.V_em);
  read("eta_vol", p.eta_vol);
  read("eta_vol_wall", p.eta_vol_wall);
  read("wall_ref", p.wall_ref);
  read("fuel_density", p.fuel_density);
  read("q_lhv", p.q_lhv);
  read("exhaust_heat_fraction", p.exhaust_heat_fraction);
  read("wall_heat_loss", p.wall_heat_loss);
  read("wall_coupling", p.wall_coupling);
  read("thermal_tau", p.thermal_tau);
  read("egr_area", p.egr_area);
  read("egr_dp_reg", p.egr_dp_reg);
  read("turbine_area", p.turbine_area);
  read("vgt_span", p.vgt_span);
  read("comp_head", p.comp_head);
  read("comp_slope", p.comp_slope);
  read("eta_comp", p.eta_comp);
  read("eta_turb", p.eta_turb);
  read("turbo_inertia", p.turbo_inertia);
  read("turbo_friction", p.turbo_friction);
  read("substep", p.substep);
  read("speed_min", p.speed_min);
  read("speed_max", p.speed_max);
  read("fuel_min", p.fuel_min);
  read("fuel_max", p.fuel_max);
  read("p_max", p.p_max);
  read("wall_max", p.wall_max);
  p.validate();
  return p;
}

void PlantParams::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw InputError(std::string("plant parameters: ") + msg);
  };
  require(p_amb > 0.0 && T_amb > 0.0 && T_im > 0.0, "ambient must be positive");
  require(displacement > 0.0 && cylinders > 0, "engine geometry must be positive");
  require(V_im > 0.0 && V_em > 0.0, "manifold volumes must be positive");
  require(eta_vol > 0.0 && eta_vol <= 1.2, "eta_vol out of range");
  require(wall_heat_loss >= 0.0 && wall_heat_loss < 1.0, "wall_heat_loss in [0,1)");
  require(wall_coupling >= 0.0 && wall_coupling <= 1.0, "wall_coupling in [0,1]");
  require(thermal_tau > 0.0, "thermal_tau must be positive");
  require(egr_area >= 0.0 && turbine_area > 0.0, "flow areas");
  require(vgt_span >= 0.0 && vgt_span < 1.0, "vgt_span in [0,1)");
  require(turbo_inertia > 0.0, "turbo_inertia must be positive");
  require(substep > 0.0 && substep <= 0.02, "substep in (0, 20 ms]");
  require(speed_min > 0.0 && speed_min < speed_max, "speed envelope");
  require(fuel_min >= 0.0 && fuel_min < fuel_max, "fuel envelope");
  require(p_max > p_amb, "p_max must exceed ambient");
  require(wall_max > T_amb, "wall_max must exceed ambient");
}

ActuatorInput NominalActuatorMap::operator()(const OperatingPoint& rho) const {
  const double load = (rho.fuel_rate - fuel_ref) / fuel_span;
  const double speed = (rho.engine_speed - speed_ref) / speed_span;
  return ActuatorInput{egr_base + egr_per_load * load,
                       vgt_base + vgt_per_speed * speed + vgt_per_load * load}
      .clamped();
}

NominalActuatorMap NominalActuatorMap::from_config(const Config& cfg) {
  NominalActuatorMap m;
  auto read = [&cfg](const char* name, double& field) {
    field = cfg.get_double(std::string("nominal.") + name, field);
  };
  read("egr_base", m.egr_base);
  read("egr_per_load", m.egr_per_load);
  read("vgt_base", m.vgt_base);
  read("vgt_per_speed", m.vgt_per_speed);
  read("vgt_per_load", m.vgt_per_load);
  read("speed_ref", m.speed_ref);
  read("speed_span", m.speed_span);
  read("fuel_ref", m.fuel_ref);
  read("fuel_span", m.fuel_span);
  if (!(m.speed_span > 0.0) || !(m.fuel_span > 0.0)) {
    throw InputError("nominal actuator map spans must be positive");
  }
  return m;
}

struct Plant::Flows {
  double w_cyl = 0.0;
  double w_fuel = 0.0;
  double T_ad = 0.0;
  double T_em = 0.0;
  double w_egr = 0.0;
  double w_turb = 0.0;
  double w_comp = 0.0;
  double P_comp = 0.0;
  double P_turb = 0.0;
};

Plant::Plant(PlantParams params) : params_(params) { params_.validate(); }

bool Plant::in_envelope(const OperatingPoint& rho) const {
  return rho.engine_speed >= params_.speed_min &&
         rho.engine_speed <= params_.speed_max &&
         rho.fuel_rate >= params_.fuel_min && rho.fuel_rate <= params_.fuel_max;
}

OperatingPoint Plant::clamp_to_envelope(const OperatingPoint& rho) const {
  return {std::clamp(rho.engine_speed, params_.speed_min, params_.speed_max),
          std::clamp(rho.fuel_rate, params_.fuel_min, params_.fuel_max)};
}

Plant::Flows Plant::flows(const PlantState& s, const ActuatorInput& u,
                          const OperatingPoint& rho) const {
  const auto& p = params_;
  Flows f;
  const double cycles_per_s = rho.engine_speed / 120.0;
  const double eta = p.eta_vol - p.eta_vol_wall * (s.wall_temp - p.wall_ref);
  f.w_cyl = eta * s.p_im * kPaPerBar * p.displacement * cycles_per_s /
            (kGasConstant * p.T_im);
  f.w_fuel = rho.fuel_rate * 1e-9 * p.fuel_density * p.cylinders * cycles_per_s;
  f.T_ad = p.T_im + p.q_lhv * f.w_fuel * p.exhaust_heat_fraction /
                        ((f.w_cyl + f.w_fuel) * kCpExhaust);
  f.T_em = f.T_ad - p.wall_heat_loss * (f.T_ad - s.wall_temp);

  // EGR valve: orifice with sqrt(dp) smoothed near zero, no reverse flow.
  const double dp = (s.p_em - s.p_im) * kPaPerBar;
  if (dp > 0.0) {
    const double reg = p.egr_dp_reg * kPaPerBar;
    const double root_dp = dp / std::pow(dp * dp + reg * reg, 0.25);
    const double density = s.p_em * kPaPerBar / (kGasConstant * f.T_em);
    f.w_egr = p.egr_area * (u.egr_pos / 100.0) * std::sqrt(2.0 * density) * root_dp;
  }

  const double area = p.turbine_area * (1.0 - p.vgt_span * u.vgt_pos / 100.0);
  f.w_turb = area * s.p_em * kPaPerBar / std::sqrt(kGasConstant * f.T_em) *
             flow_function(p.p_amb / s.p_em, kGammaExhaust);

  const double pr_comp = s.p_im / p.p_amb;
  const double omega = std::max(s.turbo_speed, kMinTurboSpeed);
  f.w_comp = std::max(0.0, (1.0 + p.comp_head * s.turbo_speed * s.turbo_speed -
                            pr_comp) / (p.comp_slope * omega));
  f.P_comp = f.w_comp * kCpAir * p.T_amb *
             (std::pow(pr_comp, (kGammaAir - 1.0) / kGammaAir) - 1.0) / p.eta_comp;
  f.P_turb = f.w_turb * kCpExhaust * f.T_em * p.eta_turb *
             (1.0 - std::pow(p.p_amb / s.p_em, (kGammaExhaust - 1.0) / kGammaExhaust));
  return f;
}

std::array<double, 4> Plant::derivative(const PlantState& s, ActuatorInput u,
                                        const OperatingPoint& rho) const {
  const auto& p = params_;
  const Flows f = flows(s, u, rho);
  const double omega = std::max(s.turbo_speed, kMinTurboSpeed);
  const double target = p.T_amb + p.wall_coupling * (f.T_ad - p.T_amb);
  return {
      kGasConstant * p.T_im / p.V_im * (f.w_comp + f.w_egr - f.w_cyl) / kPaPerBar,
      kGasConstant * f.T_em / p.V_em * (f.w_cyl + f.w_fuel - f.w_egr - f.w_turb) /
          kPaPerBar,
      (f.P_turb - f.P_comp - p.turbo_friction * s.turbo_speed * s.turbo_speed) /
          (p.turbo_inertia * omega),
      (target - s.wall_temp) / p.thermal_tau,
  };
}

double Plant::wall_target(const PlantState& s, ActuatorInput u,
                          const OperatingPoint& rho) const {
  const Flows f = flows(s, u, rho);
  return params_.T_amb + params_.wall_coupling * (f.T_ad - params_.T_amb);
}

double Plant::pinned_wall_temp(const PlantState& state, ActuatorInput u,
                               const OperatingPoint& rho) const {
  // Contraction: the wall only feeds back through volumetric efficiency.
  PlantState s = state;
  for (int i = 0; i < 100; ++i) {
    const double next = std::clamp(wall_target(s, u, rho), params_.T_amb,
                                   params_.wall_max);
    if (std::abs(next - s.wall_temp) <= 1e-13 * next) return next;
    s.wall_temp = next;
  }
  return s.wall_temp;
}

bool Plant::saturate(PlantState& s) const {
  const PlantState before = s;
  s.p_im = std::clamp(s.p_im, kMinPressure, params_.p_max);
  s.p_em = std::clamp(s.p_em, params_.p_amb, params_.p_max);
  s.turbo_speed = std::clamp(s.turbo_speed, 0.0, kMaxTurboSpeed);
  s.wall_temp = std::clamp(s.wall_temp, params_.T_amb, params_.wall_max);
  return !(s == before);
}

StepResult Plant::step(const PlantState& state, ActuatorInput u,
                       const OperatingPoint& rho, ThermalMode mode,
                       double dt) const {
  if (!(dt > 0.0) || dt > 0.02 + 1e-12) {
    throw InputError("plant step: dt must be in (0, 20 ms]");
  }
  u = u.clamped();
  const int n = std::max(1, static_cast<int>(std::lround(dt / params_.substep)));
  const double h = dt / n;

  StepResult result{state, false};
  PlantState& s = result.state;
  result.saturated |= saturate(s);
  if (mode == ThermalMode::SteadyState) s.wall_temp = pinned_wall_temp(s, u, rho);

  // Heun substeps
  const auto advance = [&](const PlantState& from, const auto& d, double scale) {
    PlantState to = from;
    to.p_im += scale * d[0];
    to.p_em += scale * d[1];
    to.turbo_speed += scale * d[2];
    if (mode == ThermalMode::Transient) to.wall_temp += scale * d[3];
    return to;
  };
  for (int i = 0; i < n; ++i) {
    const auto d0 = derivative(s, u, rho);
    PlantState trial = advance(s, d0, h);
    saturate(trial);
    if (mode == ThermalMode::SteadyState) trial.wall_temp = pinned_wall_temp(trial, u, rho);
    const auto d1 = derivative(trial, u, rho);
    s = advance(s, d0, 0.5 * h);
    s = advance(s, d1, 0.5 * h);
    result.saturated |= saturate(s);
    if (mode == ThermalMode::SteadyState) {
      s.wall_temp = pinned_wall_temp(s, u, rho);
    }
  }
  return result;
}

PlantOutput Plant::output(const PlantState& state, ActuatorInput u,
                          const OperatingPoint& rho) const {
  const Flows f = flows(state, u.clamped(), rho);
  PlantOutput out;
  out.p_im = state.p_im;
  out.w_egr = f.w_egr;
  out.w_thr = f.w_comp;
  out.egr_rate = (f.w_egr + f.w_comp > 0.0) ? egr_rate(f.w_egr, f.w_comp) : 0.0;
  return out;
}

PlantState Plant::find_equilibrium(const OperatingPoint& rho, ActuatorInput u,
                                   ThermalMode mode) const {
  if (!in_envelope(rho)) {
    throw InputError("find_equilibrium: operating point outside envelope");
  }
  u = u.clamped();

  using Vec4 = Eigen::Vector4d;
  auto to_state = [](const Vec4& z) {
    return PlantState{z[0], z[1], z[2], z[3]};
  };
  // Residual of the steady-state conditions; the wall row is scaled so that
  // all rows are of comparable magnitude.
  auto residual = [&](const Vec4& z) {
    const PlantState s = to_state(z);
    const auto d = derivative(s, u, rho);
    return Vec4(d[0], d[1], d[2], d[3] * params_.thermal_tau / 100.0);
  };

  // Damped fixed-point phase: march the quasi-steady thermal model in time.
  PlantState s{1.5, 1.8, 0.6, 0.0};
  s.wall_temp = pinned_wall_temp(s, u, rho);
  double last_norm = std::numeric_limits<double>::infinity();

  for (int attempt = 0; attempt < 6; ++attempt) {
    const double march = attempt == 0 ? 3.0 : 10.0;
    for (double t = 0.0; t < march; t += 0.02) {
      s = step(s, u, rho, ThermalMode::SteadyState, 0.02).state;
    }

    // Newton polish with central-difference Jacobian and backtracking.
    Vec4 z(s.p_im, s.p_em, s.turbo_speed, s.wall_temp);
    Vec4 r = residual(z);
    bool diverged = false;
    for (int it = 0; it < 50 && r.lpNorm<Eigen::Infinity>() > 1e-13; ++it) {
      Eigen::Matrix4d J;
      for (int j = 0; j < 4; ++j) {
        const double hj = 1e-6 * std::max(1.0, std::abs(z[j]));
        Vec4 zp = z, zm = z;
        zp[j] += hj;
        zm[j] -= hj;
        J.col(j) = (residual(zp) - residual(zm)) / (2.0 * hj);
      }
      const Vec4 dz = J.partialPivLu().solve(-r);
      if (!dz.allFinite()) {
        diverged = true;
        break;
      }
      double alpha = 1.0;
      Vec4 trial = z + dz;
      Vec4 rt = residual(trial);
      while ((!rt.allFinite() ||
              rt.lpNorm<Eigen::Infinity>() > (1.0 - 1e-4 * alpha) * r.lpNorm<Eigen::Infinity>()) &&
             alpha > 1e-6) {
        alpha *= 0.5;
        trial = z + alpha * dz;
        rt = residual(trial);
      }
      if (alpha <= 1e-6) {
        diverged = true;
        break;
      }
      z = trial;
      r = rt;
    }
    last_norm = r.lpNorm<Eigen::Infinity>();
    if (!diverged && last_norm <= 1e-11) {
      PlantState eq = to_state(z);
      PlantState probe = eq;
      if (saturate(probe)) {
        throw ConvergenceError("find_equilibrium: equilibrium outside state envelope",
                               last_norm);
      }
      const PlantState next = step(eq, u, rho, mode, 0.02).state;
      const double drift = std::max({std::abs(next.p_im - eq.p_im),
                                     std::abs(next.p_em - eq.p_em),
                                     std::abs(next.turbo_speed - eq.turbo_speed),
                                     std::abs(next.wall_temp - eq.wall_temp)});
      if (drift < 1e-8) return eq;
      last_norm = drift;
    }
  }
  throw ConvergenceError("find_equilibrium: no convergence", last_norm);
}

void write_plant_trajectory(const std::filesystem::path& path,
                            const std::vector<PlantSample>& samples) {
  CsvTable table;
  table.header = {"t",       "p_im",    "p_em",         "turbo_speed",
                  "wall_temp", "egr_pos", "vgt_pos",    "engine_speed",
                  "fuel_rate", "egr_rate"};
  table.rows.reserve(samples.size());
  for (const auto& s : samples) {
    table.rows.push_back({s.t, s.state.p_im, s.state.p_em, s.state.turbo_speed,
                          s.state.wall_temp, s.u.egr_pos, s.u.vgt_pos,
                          s.rho.engine_speed, s.rho.fuel_rate, s.egr_rate});
  }
  write_csv(path, table);
}

std::vector<PlantSample> read_plant_trajectory(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  const std::size_t c[10] = {
      table.column("t"),         table.column("p_im"),
      table.column("p_em"),      table.column("turbo_speed"),
      table.column("wall_temp"), table.column("egr_pos"),
      table.column("vgt_pos"),   table.column("engine_speed"),
      table.column("fuel_rate"), table.column("egr_rate")};
  std::vector<PlantSample> out;
  out.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    PlantSample s;
    s.t = r[c[0]];
    s.state = {r[c[1]], r[c[2]], r[c[3]], r[c[4]]};
    s.u = {r[c[5]], r[c[6]]};
    s.rho = {r[c[7]], r[c[8]]};
    s.egr_rate = r[c[9]];
    out.push_back(s);
  }
  return out;
}

}  // namespace airpath
