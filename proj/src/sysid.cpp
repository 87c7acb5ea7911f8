#include "airpath/sysid.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <sstream>

#include "airpath/errors.hpp"

namespace airpath {
namespace {

constexpr double kRankTolerance = 1e-9;
constexpr double kStableRadius = 0.995;

const char* regressor_name(int col) {
  static const char* names[] = {"p_im", "egr_rate", "egr_pos", "vgt_pos", "fuel_rate"};
  return names[col];
}

std::string describe_direction(const Eigen::VectorXd& v) {
  std::ostringstream os;
  bool first = true;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) < 0.1) continue;
    os << (first ? "" : " ") << (v[i] < 0 ? "-" : "+") << std::abs(v[i]) << "*"
       << regressor_name(static_cast<int>(i));
    first = false;
  }
  return os.str();
}

StateMatrix pull_inside_unit_circle(const StateMatrix& A) {
  Eigen::EigenSolver<StateMatrix> es(A);
  Eigen::Vector2cd lambda = es.eigenvalues();
  for (int i = 0; i < 2; ++i) {
    const double mag = std::abs(lambda[i]);
    if (mag > kStableRadius) lambda[i] *= kStableRadius / mag;
  }
  const Eigen::Matrix2cd V = es.eigenvectors();
  return (V * lambda.asDiagonal() * V.inverse()).real();
}

std::string where(const OperatingPoint& rho) {
  std::ostringstream os;
  os << " at rho = (" << rho.engine_speed << " rpm, " << rho.fuel_rate << " mm3/cycle)";
  return os.str();
}

std::vector<InputVector> fit_length(std::vector<InputVector> samples, std::size_t n) {
  samples.resize(n, samples.back());
  return samples;
}

}  // namespace

InputVector Experiment::input(std::size_t k, int inputs) const {
  InputVector u(inputs);
  u[0] = actuators[k].egr_pos;
  u[1] = actuators[k].vgt_pos;
  if (inputs == 3) u[2] = rho_series[k].fuel_rate;
  return u;
}

void Experiment::validate(std::size_t min_samples) const {
  if (actuators.size() != outputs.size() || rho_series.size() != outputs.size()) {
    throw InputError("experiment: inputs, schedule and outputs differ in length");
  }
  if (outputs.size() < min_samples) {
    throw InputError("experiment: needs at least " + std::to_string(min_samples) +
                     " samples");
  }
  if (!(dt > 0.0)) throw InputError("experiment: dt must be positive");
}

InputVector OperatingEquilibrium::u_ss(int inputs) const {
  InputVector v(inputs);
  v[0] = u.egr_pos;
  v[1] = u.vgt_pos;
  if (inputs == 3) v[2] = rho.fuel_rate;
  return v;
}

OperatingEquilibrium make_equilibrium(const Plant& plant, const OperatingPoint& rho,
                                      const ActuatorInput& u) {
  OperatingEquilibrium eq;
  eq.rho = rho;
  eq.u = u.clamped();
  eq.state = plant.find_equilibrium(rho, eq.u, ThermalMode::SteadyState);
  const PlantOutput y = plant.output(eq.state, eq.u, rho);
  eq.x_ss = StateVector(y.p_im, y.egr_rate);
  return eq;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

Perturbation generate_perturbation(const InputVector& u_ss, int n_steps, int hold,
                                   std::uint64_t seed,
                                   const PerturbationOptions& options) {
  if (n_steps < 1 || hold < 1) throw InputError("perturbation: n_steps and hold must be >= 1");
  if (!(options.amplitude >= 0.0)) throw InputError("perturbation: amplitude must be >= 0");
  const auto m = u_ss.size();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Perturbation out;
  out.samples.reserve(static_cast<std::size_t>(n_steps) * hold);
  for (int s = 0; s < n_steps; ++s) {
    InputVector level(m);
    for (Eigen::Index c = 0; c < m; ++c) {
      const double lo = c < static_cast<Eigen::Index>(options.lower.size()) ? options.lower[c] : 0.0;
      const double hi = c < static_cast<Eigen::Index>(options.upper.size()) ? options.upper[c] : 100.0;
      const double raw = u_ss[c] * (1.0 + options.amplitude * unit(rng));
      level[c] = std::clamp(raw, lo, hi);
      if (level[c] != raw) ++out.clipped;
    }
    for (int h = 0; h < hold; ++h) out.samples.push_back(level);
  }
  return out;
}

Experiment simulate_experiment(const Plant& plant, const OperatingEquilibrium& eq,
                               const std::vector<InputVector>& inputs, ThermalMode mode,
                               std::uint64_t seed, double dt) {
  Experiment ex;
  ex.rho = eq.rho;
  ex.dt = dt;
  ex.seed = seed;
  ex.actuators.reserve(inputs.size());
  ex.rho_series.reserve(inputs.size());
  ex.outputs.reserve(inputs.size());
  PlantState state = eq.state;
  ActuatorInput u_prev = eq.u;
  OperatingPoint rho_prev = eq.rho;
  for (const auto& in : inputs) {
    if (in.size() < 2) throw InputError("simulate_experiment: need at least 2 inputs");
    const PlantOutput y = plant.output(state, u_prev, rho_prev);
    const ActuatorInput u = ActuatorInput{in[0], in[1]}.clamped();
    OperatingPoint rho = eq.rho;
    if (in.size() == 3) rho.fuel_rate = in[2];
    rho = plant.clamp_to_envelope(rho);
    ex.outputs.emplace_back(y.p_im, y.egr_rate);
    ex.actuators.push_back(u);
    ex.rho_series.push_back(rho);
    state = plant.step(state, u, rho, mode, dt).state;
    u_prev = u;
    rho_prev = rho;
  }
  return ex;
}

LinearSubmodel fit_submodel(const std::vector<Experiment>& experiments,
                            ModelVariant variant, const StateVector& x_ss,
                            const InputVector& u_ss, FitDiagnostics* diag) {
  const int m = input_count(variant);
  if (u_ss.size() != m) throw InputError("fit_submodel: u_ss size does not match variant");
  if (experiments.empty()) throw InputError("fit_submodel: no experiments");
  std::size_t rows = 0;
  for (const auto& ex : experiments) {
    ex.validate(2);
    if (!(ex.rho == experiments.front().rho)) {
      throw InputError("fit_submodel: experiments do not share an operating point");
    }
    rows += ex.size() - 1;
  }
  const int p = kStates + m;
  Eigen::MatrixXd Phi(rows, p);
  Eigen::MatrixXd Y(rows, kStates);
  Eigen::Index r = 0;
  for (const auto& ex : experiments) {
    for (std::size_t k = 0; k + 1 < ex.size(); ++k, ++r) {
      Phi.row(r).head<2>() = (ex.outputs[k] - x_ss).transpose();
      Phi.row(r).tail(m) = (ex.input(k, m) - u_ss).transpose();
      Y.row(r) = (ex.outputs[k + 1] - x_ss).transpose();
    }
  }

  // Column equilibration keeps the rank test independent of units.
  Eigen::VectorXd scale = Phi.colwise().norm().transpose();
  std::vector<std::string> deficient;
  for (int c = 0; c < p; ++c) {
    if (!(scale[c] > 0.0)) {
      deficient.push_back(std::string("+1*") + regressor_name(c));
      scale[c] = 1.0;
    }
  }
  const Eigen::MatrixXd Phis = Phi * scale.cwiseInverse().asDiagonal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Phis);
  const Eigen::MatrixXd R = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(R, Eigen::ComputeFullV);
  const Eigen::VectorXd sigma = svd.singularValues();
  if (deficient.empty()) {
    for (int i = 0; i < p; ++i) {
      if (sigma[i] <= kRankTolerance * sigma[0]) {
        deficient.push_back(describe_direction(svd.matrixV().col(i)));
      }
    }
  }
  if (!deficient.empty()) {
    std::string msg = "fit_submodel: insufficient excitation along";
    for (const auto& d : deficient) msg += " [" + d + "]";
    throw IdentifiabilityError(msg + where(experiments.front().rho));
  }

  const Eigen::MatrixXd theta = scale.cwiseInverse().asDiagonal() * qr.solve(Y);
  LinearSubmodel sm;
  sm.rho = experiments.front().rho;
  sm.A = theta.topRows<2>().transpose();
  sm.B = theta.bottomRows(m).transpose();
  sm.x_ss = x_ss;
  sm.u_ss = u_ss;

  const double raw_radius = spectral_radius(sm.A);
  const bool stabilize = raw_radius >= 1.0;
  if (stabilize) sm.A = pull_inside_unit_circle(sm.A);
  if (diag) {
    diag->samples = rows;
    diag->spectral_radius_raw = raw_radius;
    diag->stabilized = stabilize;
    diag->singular_values.assign(sigma.data(), sigma.data() + sigma.size());
    diag->residual_sum_of_squares = residual_sum_of_squares(experiments, sm);
  }
  return sm;
}

double residual_sum_of_squares(const std::vector<Experiment>& experiments,
                               const LinearSubmodel& model) {
  const int m = model.inputs();
  double rss = 0.0;
  for (const auto& ex : experiments) {
    for (std::size_t k = 0; k + 1 < ex.size(); ++k) {
      const StateVector pred = model.x_ss + model.A * (ex.outputs[k] - model.x_ss) +
                               model.B * (ex.input(k, m) - model.u_ss);
      rss += (ex.outputs[k + 1] - pred).squaredNorm();
    }
  }
  return rss;
}

ValidationReport error_metrics(const std::vector<StateVector>& predicted,
                               const std::vector<StateVector>& measured) {
  if (predicted.size() != measured.size()) {
    throw InputError("error_metrics: prediction and data lengths differ");
  }
  ValidationReport rep;
  rep.samples = predicted.size();
  if (predicted.empty()) return rep;
  const double n = static_cast<double>(predicted.size());
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    rep.mean_abs_err += (predicted[k] - measured[k]).cwiseAbs();
  }
  rep.mean_abs_err /= n;
  Eigen::Vector2d var = Eigen::Vector2d::Zero();
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const Eigen::Vector2d d = (predicted[k] - measured[k]).cwiseAbs() - rep.mean_abs_err;
    var += d.cwiseProduct(d);
  }
  rep.std_abs_err = (var / n).cwiseSqrt();
  return rep;
}

std::vector<StateVector> simulate_model(const LinearSubmodel& model, const Experiment& data) {
  data.validate(1);
  const int m = model.inputs();
  std::vector<StateVector> xs(data.size());
  xs[0] = data.outputs[0];
  for (std::size_t k = 0; k + 1 < data.size(); ++k) {
    xs[k + 1] = model.x_ss + model.A * (xs[k] - model.x_ss) +
                model.B * (data.input(k, m) - model.u_ss);
  }
  return xs;
}

std::vector<StateVector> simulate_model(const LpvModel& model, const Experiment& data) {
  data.validate(1);
  const int m = model.inputs();
  std::vector<StateVector> xs(data.size());
  xs[0] = data.outputs[0];
  for (std::size_t k = 0; k + 1 < data.size(); ++k) {
    xs[k + 1] = predict_absolute(model.schedule(data.rho_series[k]), xs[k], data.input(k, m));
  }
  return xs;
}

namespace {
ValidationReport rollout_errors(std::vector<StateVector> pred, const Experiment& data) {
  std::vector<StateVector> meas(data.outputs.begin() + 1, data.outputs.end());
  pred.erase(pred.begin());
  return error_metrics(pred, meas);
}
}  // namespace

ValidationReport validate_model(const LinearSubmodel& model, const Experiment& data) {
  return rollout_errors(simulate_model(model, data), data);
}

ValidationReport validate_model(const LpvModel& model, const Experiment& data) {
  return rollout_errors(simulate_model(model, data), data);
}

IdentificationOptions IdentificationOptions::from_config(const Config& cfg) {
  IdentificationOptions o;
  o.train_seconds = cfg.get_double("sysid.train_seconds", o.train_seconds);
  o.validation_seconds = cfg.get_double("sysid.validation_seconds", o.validation_seconds);
  o.hold = cfg.get_int("sysid.hold", o.hold);
  o.amplitude = cfg.get_double("sysid.amplitude", o.amplitude);
  o.dt = cfg.get_double("sysid.dt", o.dt);
  o.seed = static_cast<std::uint64_t>(cfg.get_int("sysid.seed", static_cast<int>(o.seed)));
  o.nominal = NominalActuatorMap::from_config(cfg);
  if (!(o.train_seconds > 0.0) || !(o.validation_seconds > 0.0) || o.hold < 1 ||
      !(o.dt > 0.0)) {
    throw InputError("sysid options must be positive");
  }
  return o;
}

IdentificationResult build_lpv_variant(const Plant& plant, ModelVariant variant,
                                       const Lattice& lattice,
                                       const IdentificationOptions& options) {
  lattice.validate();
  const int m = input_count(variant);
  const ThermalMode mode = thermal_mode(variant);
  const auto& pp = plant.params();
  PerturbationOptions popt;
  popt.amplitude = options.amplitude;
  popt.lower = {0.0, 0.0, pp.fuel_min};
  popt.upper = {100.0, 100.0, pp.fuel_max};

  auto samples_for = [&](double seconds) {
    return static_cast<std::size_t>(std::lround(seconds / options.dt));
  };
  const std::size_t n_train = samples_for(options.train_seconds);
  const std::size_t n_val = samples_for(options.validation_seconds);
  auto levels_for = [&](std::size_t n) {
    return static_cast<int>((n + options.hold - 1) / options.hold);
  };

  std::vector<LinearSubmodel> subs;
  std::vector<PointReport> reports;
  for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
    const OperatingPoint rho = lattice.node(idx);
    try {
      const auto eq = make_equilibrium(plant, rho, options.nominal(rho));
      const InputVector u_ss = eq.u_ss(m);
      const auto train_seed = derive_seed(options.seed, idx, 1);
      const auto val_seed = derive_seed(options.seed, idx, 2);
      const auto train_in = generate_perturbation(u_ss, levels_for(n_train), options.hold,
                                                  train_seed, popt);
      const auto val_in =
          generate_perturbation(u_ss, levels_for(n_val), options.hold, val_seed, popt);
      const auto train = simulate_experiment(
          plant, eq, fit_length(train_in.samples, n_train), mode, train_seed, options.dt);
      const auto val = simulate_experiment(plant, eq, fit_length(val_in.samples, n_val),
                                           mode, val_seed, options.dt);
      PointReport rep;
      rep.rho = rho;
      rep.clipped = train_in.clipped + val_in.clipped;
      subs.push_back(fit_submodel({train}, variant, eq.x_ss, u_ss, &rep.fit));
      rep.validation = validate_model(subs.back(), val);
      reports.push_back(std::move(rep));
    } catch (const IdentifiabilityError&) {
      throw;  // already names the node
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(std::string(e.what()) + where(rho), e.residual());
    }
  }
  return {LpvModel(lattice, std::move(subs), variant, options.dt), std::move(reports)};
}

}  // namespace airpath
