#include "airpath/calib.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

#include "airpath/csv.hpp"
#include "airpath/errors.hpp"
#include "json.hpp"

namespace airpath {
namespace {

// exp(M) by scaling and squaring with a truncated Taylor series.
Eigen::Matrix3d expm(const Eigen::Matrix3d& m) {
  const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Eigen::Matrix3d a = m / std::ldexp(1.0, squarings);
  Eigen::Matrix3d term = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d sum = term;
  for (int k = 1; k <= 16; ++k) {
    term = term * a / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

double median(std::vector<double> v) {
  if (v.empty()) throw InputError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double span(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi > *lo ? *hi - *lo : 1.0;
}

// Listed (speed, fuel, egr) high flags in region order.
constexpr std::array<std::array<bool, 3>, 6> kRegions{{{false, false, false},
                                                       {false, false, true},
                                                       {false, true, false},
                                                       {true, false, false},
                                                       {true, false, true},
                                                       {true, true, false}}};

int region_of(bool s, bool f, bool e) {
  for (int i = 0; i < 6; ++i) {
    if (kRegions[i][0] == s && kRegions[i][1] == f && kRegions[i][2] == e) return i + 1;
  }
  return 0;
}

StepMetrics worst(const StepMetrics& a, const StepMetrics& b) {
  StepMetrics w;
  w.response_time_90 = std::max(a.response_time_90, b.response_time_90);
  w.overshoot = std::max(a.overshoot, b.overshoot);
  w.steady_error = std::max(a.steady_error, b.steady_error);
  w.reached = a.reached && b.reached;
  return w;
}

StepMetrics failed_metrics() {
  StepMetrics m;
  m.overshoot = std::numeric_limits<double>::infinity();
  return m;
}

StepMetrics channel_metrics(const SimLog& log, int channel, std::size_t k_step, double dt) {
  std::vector<double> traj;
  for (std::size_t k = k_step; k < log.records.size(); ++k) traj.push_back(log.records[k].x[channel]);
  const double initial = log.records[k_step - 1].target[channel];
  const double target = log.records.back().target[channel];
  try {
    return measure_step_metrics(traj, dt, initial, target);
  } catch (const SettleError&) {
    StepMetrics m;
    double peak = 0.0;
    for (double y : traj) peak = std::max(peak, (y - target) / (target - initial));
    m.overshoot = peak;
    return m;
  }
}

double channel_score(const StepMetrics& m, const ReferenceSpec& spec) {
  const double limit = spec.response_time();
  double s = 0.0;
  if (!m.reached || !std::isfinite(m.response_time_90)) {
    s += 1e3;
  } else {
    s += std::max(0.0, m.response_time_90 / limit - 1.0);
  }
  if (!std::isfinite(m.overshoot)) return s + 1e3;
  s += std::max(0.0, m.overshoot - spec.overshoot) / std::max(spec.overshoot, 0.01);
  return s;
}

using WeightKey = std::tuple<double, double, double, double>;
WeightKey key_of(const MpcWeights& w) {
  return {w.Q_e(0, 0), w.Q_e(1, 1), w.R(0, 0), w.R(1, 1)};
}

MpcWeights clamp_weights(MpcWeights w, double lo, double hi) {
  for (int i = 0; i < 2; ++i) {
    w.Q_e(i, i) = std::clamp(w.Q_e(i, i), lo, hi);
    w.R(i, i) = std::clamp(w.R(i, i), lo, hi);
  }
  return w;
}

std::string describe(const char* name, const StepMetrics& m, const ReferenceSpec& spec) {
  std::ostringstream os;
  if (!m.reached) {
    os << name << " never held its 90% level; ";
  } else if (m.response_time_90 > spec.response_time()) {
    os << name << " response time " << m.response_time_90 << " s > " << spec.response_time()
       << " s; ";
  }
  if (m.overshoot > spec.overshoot) {
    os << name << " overshoot " << m.overshoot << " > " << spec.overshoot << "; ";
  }
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------- reference

void ReferenceSpec::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InputError("ReferenceSpec: tau must be > 0");
  if (!(overshoot >= 0.0 && overshoot < 1.0)) {
    throw InputError("ReferenceSpec: overshoot must lie in [0, 1)");
  }
  if (!(dt > 0.0)) throw InputError("ReferenceSpec: dt must be > 0");
}

double ReferenceSpec::damping() const {
  if (overshoot == 0.0) return 1.0;
  const double l = std::log(overshoot);
  return -l / std::sqrt(std::numbers::pi * std::numbers::pi + l * l);
}

double ReferenceSpec::response_time() const {
  validate();
  const auto n = static_cast<std::size_t>(std::ceil(40.0 * tau / (damping() * dt))) + 10;
  const auto y = desired_response(*this, 1.0, n);
  for (std::size_t k = 1; k < y.size(); ++k) {
    if (y[k] >= 0.9) return dt * (static_cast<double>(k - 1) + (0.9 - y[k - 1]) / (y[k] - y[k - 1]));
  }
  return std::numeric_limits<double>::infinity();
}

std::vector<double> desired_response(const ReferenceSpec& spec, double r_step,
                                     std::size_t samples) {
  spec.validate();
  const double wn = spec.natural_frequency();
  const double zeta = spec.damping();
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  m(0, 1) = 1.0;
  m(1, 0) = -wn * wn;
  m(1, 1) = -2.0 * zeta * wn;
  m(1, 2) = wn * wn;
  const Eigen::Matrix3d phi = expm(m * spec.dt);
  const Eigen::Matrix2d a = phi.topLeftCorner<2, 2>();
  const Eigen::Vector2d b = phi.topRightCorner<2, 1>();

  std::vector<double> y(samples);
  Eigen::Vector2d s = Eigen::Vector2d::Zero();
  for (std::size_t k = 0; k < samples; ++k) {
    y[k] = s[0];
    s = a * s + b * r_step;
  }
  return y;
}

StepMetrics measure_step_metrics(const std::vector<double>& traj, double dt, double initial,
                                 double target) {
  if (target == initial) throw InputError("measure_step_metrics: target equals initial");
  if (traj.empty() || !(dt > 0.0)) throw InputError("measure_step_metrics: empty trajectory");
  const double step = target - initial;
  const std::size_t n = traj.size();

  StepMetrics m;
  double peak = 0.0;
  for (double y : traj) peak = std::max(peak, (y - target) / step);
  m.overshoot = peak;

  constexpr std::size_t kHold = 5;
  for (std::size_t k = 0; k < n && !m.reached; ++k) {
    const std::size_t end = std::min(n, k + kHold);
    bool held = true;
    for (std::size_t j = k; j < end && held; ++j) held = (traj[j] - initial) / step >= 0.9;
    if (held) {
      m.reached = true;
      m.response_time_90 = dt * static_cast<double>(k);
    }
  }
  if (!m.reached) return m;

  const std::size_t tail = std::max<std::size_t>(1, n / 10);
  double mean = 0.0;
  for (std::size_t k = n - tail; k < n; ++k) {
    if (std::abs(traj[k] - target) > 0.02 * std::abs(step)) {
      std::ostringstream os;
      os << "response not settled: sample " << k << " is " << traj[k] << " against target "
         << target;
      throw SettleError(os.str());
    }
    mean += traj[k];
  }
  m.steady_error = std::abs(mean / static_cast<double>(tail) - target);
  return m;
}

// ---------------------------------------------------------------- tuning

CalibOptions CalibOptions::from_config(const Config& cfg) {
  CalibOptions o;
  o.spec_pim.tau = cfg.get_double("calib.tau_p_im", o.spec_pim.tau);
  o.spec_pim.overshoot = cfg.get_double("calib.overshoot_p_im", o.spec_pim.overshoot);
  o.spec_egr.tau = cfg.get_double("calib.tau_egr_rate", o.spec_egr.tau);
  o.spec_egr.overshoot = cfg.get_double("calib.overshoot_egr_rate", o.spec_egr.overshoot);
  o.spec_pim.dt = o.spec_egr.dt = cfg.get_double("mpc.dt", 0.02);
  o.fuel_step = cfg.get_double("calib.fuel_step", o.fuel_step);
  o.step_duration = cfg.get_double("calib.step_duration", o.step_duration);
  o.budget = cfg.get_int("calib.budget", o.budget);
  o.weight_min = cfg.get_double("calib.weight_min", o.weight_min);
  o.weight_max = cfg.get_double("calib.weight_max", o.weight_max);
  o.spec_pim.validate();
  o.spec_egr.validate();
  if (o.budget < 1 || !(o.fuel_step > 0.0) || !(o.step_duration > 2.0) ||
      !(o.weight_min > 0.0 && o.weight_min < o.weight_max)) {
    throw InputError("calib options out of range");
  }
  return o;
}

PointMetrics evaluate_point(const Workbench& bench, const LpvModel& model, const MpcConfig& cfg,
                            const OperatingPoint& rho, const MpcWeights& weights,
                            const CalibOptions& options) {
  const auto& axis = bench.setpoints.lattice.fuel_axis;
  double lo = rho.fuel_rate - 0.5 * options.fuel_step;
  double hi = rho.fuel_rate + 0.5 * options.fuel_step;
  if (lo < axis.front()) {
    hi += axis.front() - lo;
    lo = axis.front();
  }
  if (hi > axis.back()) {
    lo = std::max(axis.front(), lo - (hi - axis.back()));
    hi = axis.back();
  }
  const OperatingPoint low{rho.engine_speed, lo};
  const OperatingPoint high{rho.engine_speed, hi};

  MpcController controller(model, cfg, [weights](const OperatingPoint&) { return weights; });
  const auto k_step = static_cast<std::size_t>(std::lround(1.0 / cfg.dt));
  PointMetrics out;
  bool first = true;
  for (const auto& [from, to] : {std::pair{low, high}, std::pair{high, low}}) {
    PointMetrics pm;
    try {
      const SimLog log = run_step_test(bench, &controller, from, to, options.step_duration, 1.0);
      pm.p_im = channel_metrics(log, 0, k_step, cfg.dt);
      pm.egr_rate = channel_metrics(log, 1, k_step, cfg.dt);
    } catch (const EnvelopeError&) {
      pm.p_im = pm.egr_rate = failed_metrics();
    }
    if (first) {
      out = pm;
      first = false;
    } else {
      out.p_im = worst(out.p_im, pm.p_im);
      out.egr_rate = worst(out.egr_rate, pm.egr_rate);
    }
  }
  return out;
}

TuneResult tune_point(const Workbench& bench, const LpvModel& model, const MpcConfig& cfg,
                      const OperatingPoint& rho, const MpcWeights& initial,
                      const CalibOptions& options) {
  const ReferenceSpec* specs[2] = {&options.spec_pim, &options.spec_egr};
  TuneResult result;
  result.rho = rho;
  std::set<WeightKey> seen;

  struct Scored {
    MpcWeights w;
    PointMetrics pm;
    double s[2] = {0.0, 0.0};
    double total() const { return s[0] + s[1]; }
  };
  auto evaluate = [&](const MpcWeights& w) {
    Scored r{w, evaluate_point(bench, model, cfg, rho, w, options)};
    r.s[0] = channel_score(r.pm.p_im, options.spec_pim);
    r.s[1] = channel_score(r.pm.egr_rate, options.spec_egr);
    seen.insert(key_of(w));
    ++result.evaluations;
    TuneIteration it;
    it.iteration = result.evaluations;
    it.weights = w;
    it.metrics = r.pm;
    it.score = r.total();
    it.met = it.score == 0.0;
    it.best_score = result.trace.empty() ? it.score : std::min(it.score, result.trace.back().best_score);
    result.trace.push_back(it);
    return r;
  };

  Scored cur = evaluate(clamp_weights(initial, options.weight_min, options.weight_max));
  while (cur.total() > 0.0 && result.evaluations < options.budget) {
    // p_im first, then the EGR rate; a regressed p_im is revisited.
    const int c = cur.s[0] > 0.0 ? 0 : 1;
    const StepMetrics& m = c == 0 ? cur.pm.p_im : cur.pm.egr_rate;
    const bool slow = !m.reached || m.response_time_90 > specs[c]->response_time();

    // Candidate x2 / /2 moves, most promising first.
    auto scaled = [&](int which, double f) {
      MpcWeights w = cur.w;
      if (which < 2) {
        w.Q_e(which, which) *= f;
      } else {
        w.R *= f;
      }
      return clamp_weights(w, options.weight_min, options.weight_max);
    };
    const int other = 1 - c;
    std::vector<MpcWeights> moves;
    if (slow) {
      moves = {scaled(c, 2.0), scaled(2, 0.5), scaled(other, 0.5), scaled(c, 0.5),
               scaled(2, 2.0), scaled(other, 2.0)};
    } else {
      moves = {scaled(c, 0.5), scaled(2, 2.0), scaled(c, 2.0), scaled(other, 0.5),
               scaled(2, 0.5), scaled(other, 2.0)};
    }
    bool improved = false;
    for (const auto& w : moves) {
      if (seen.count(key_of(w)) || result.evaluations >= options.budget) continue;
      Scored trial = evaluate(w);
      // progress on the channel being tuned without losing a met channel
      const bool better = trial.s[c] < cur.s[c] && (cur.s[other] > 0.0 || trial.s[other] == 0.0);
      if (better || trial.total() < cur.total()) {
        cur = trial;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }

  // best found over the whole trace
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.trace.size(); ++i) {
    if (result.trace[i].score < result.trace[best].score) best = i;
  }
  result.weights = result.trace[best].weights;
  result.metrics = result.trace[best].metrics;
  result.met = result.trace[best].met;
  if (!result.met) {
    std::ostringstream os;
    os << describe("p_im", result.metrics.p_im, options.spec_pim)
       << describe("egr_rate", result.metrics.egr_rate, options.spec_egr) << "after "
       << result.evaluations << " evaluations";
    result.unmet = os.str();
  }
  return result;
}

void TuneResult::write_trace_csv(const std::filesystem::path& path) const {
  CsvTable t;
  t.header = {"iteration", "q_p_im",      "q_egr_rate",  "r_egr_pos",   "r_vgt_pos",
              "t90_p_im",  "os_p_im",     "t90_egr_rate", "os_egr_rate", "score",
              "best_score", "met"};
  for (const auto& it : trace) {
    t.rows.push_back({static_cast<double>(it.iteration), it.weights.Q_e(0, 0),
                      it.weights.Q_e(1, 1), it.weights.R(0, 0), it.weights.R(1, 1),
                      it.metrics.p_im.response_time_90, it.metrics.p_im.overshoot,
                      it.metrics.egr_rate.response_time_90, it.metrics.egr_rate.overshoot,
                      it.score, it.best_score, it.met ? 1.0 : 0.0});
  }
  write_csv(path, t);
}

// ---------------------------------------------------------------- regions

RegionThresholds median_thresholds(const Lattice& lattice,
                                   const std::vector<double>& egr_setpoints) {
  return {median(lattice.speed_axis), median(lattice.fuel_axis), median(egr_setpoints)};
}

RegionMap assign_regions(const Lattice& lattice, const std::vector<double>& egr_setpoints) {
  return assign_regions(lattice, egr_setpoints, median_thresholds(lattice, egr_setpoints));
}

RegionMap assign_regions(const Lattice& lattice, const std::vector<double>& egr_setpoints,
                         const RegionThresholds& th) {
  lattice.validate();
  if (egr_setpoints.size() != lattice.size()) {
    throw InputError("assign_regions: one EGR set-point per lattice node required");
  }
  RegionMap map;
  map.thresholds = th;
  map.lattice = lattice;
  const double fuel_range = span(lattice.fuel_axis);
  const double egr_range = span(egr_setpoints);

  for (std::size_t k = 0; k < lattice.size(); ++k) {
    const OperatingPoint rho = lattice.node(k);
    const double egr = egr_setpoints[k];
    const bool s = rho.engine_speed > th.speed_split;
    const bool f = rho.fuel_rate > th.fuel_split;
    const bool e = egr > th.egr_split;
    int id = region_of(s, f, e);
    if (id == 0) {
      // high fuel with high EGR: drop whichever flag sits closer to its split
      const double to_fuel = std::abs(rho.fuel_rate - th.fuel_split) / fuel_range;
      const double to_egr = std::abs(egr - th.egr_split) / egr_range;
      const int by_fuel = region_of(s, false, true);
      const int by_egr = region_of(s, true, false);
      id = to_fuel < to_egr || (to_fuel == to_egr && by_fuel < by_egr) ? by_fuel : by_egr;
      std::ostringstream os;
      os << "node (" << rho.engine_speed << ", " << rho.fuel_rate
         << ") has high fuel and high EGR rate; assigned to region " << id;
      map.warnings.push_back(os.str());
    }
    map.region.push_back(id);
  }
  return map;
}

int RegionMap::region_at(const OperatingPoint& rho) const {
  if (region.empty()) throw InputError("RegionMap: no assignments");
  const double ds = span(lattice.speed_axis);
  const double df = span(lattice.fuel_axis);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < lattice.size(); ++k) {
    const OperatingPoint n = lattice.node(k);
    const double a = (n.engine_speed - rho.engine_speed) / ds;
    const double b = (n.fuel_rate - rho.fuel_rate) / df;
    const double d = a * a + b * b;
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return region.at(best);
}

std::vector<int> RegionMap::region_ids() const {
  std::set<int> ids(region.begin(), region.end());
  return {ids.begin(), ids.end()};
}

WeightSchedule RegionMap::schedule(const MpcWeights& fallback) const {
  return [map = *this, fallback](const OperatingPoint& rho) {
    const auto it = map.weights.find(map.region_at(rho));
    return it == map.weights.end() ? fallback : it->second;
  };
}

std::string RegionMap::to_json() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["thresholds"] = {{"speed_split", thresholds.speed_split},
                     {"fuel_split", thresholds.fuel_split},
                     {"egr_split", thresholds.egr_split}};
  j["speed_axis"] = lattice.speed_axis;
  j["fuel_axis"] = lattice.fuel_axis;
  j["assignments"] = nlohmann::json::array();
  for (std::size_t k = 0; k < region.size(); ++k) {
    const auto rho = lattice.node(k);
    j["assignments"].push_back(
        {{"engine_speed", rho.engine_speed}, {"fuel_rate", rho.fuel_rate}, {"region", region[k]}});
  }
  j["weights"] = nlohmann::json::object();
  for (const auto& [id, w] : weights) {
    j["weights"][std::to_string(id)] = {{"q_e", {w.Q_e(0, 0), w.Q_e(1, 1)}},
                                        {"r", {w.R(0, 0), w.R(1, 1)}}};
  }
  j["warnings"] = warnings;
  return j.dump(1);
}

RegionMap RegionMap::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RegionMap m;
    const auto& t = j.at("thresholds");
    m.thresholds = {t.at("speed_split").get<double>(), t.at("fuel_split").get<double>(),
                    t.at("egr_split").get<double>()};
    m.lattice.speed_axis = j.at("speed_axis").get<std::vector<double>>();
    m.lattice.fuel_axis = j.at("fuel_axis").get<std::vector<double>>();
    m.lattice.validate();
    const auto& a = j.at("assignments");
    if (a.size() != m.lattice.size()) throw InputError("RegionMap: assignment count mismatch");
    for (std::size_t k = 0; k < a.size(); ++k) {
      const auto rho = m.lattice.node(k);
      if (a[k].at("engine_speed").get<double>() != rho.engine_speed ||
          a[k].at("fuel_rate").get<double>() != rho.fuel_rate) {
        throw InputError("RegionMap: assignments out of lattice order");
      }
      const int id = a[k].at("region").get<int>();
      if (id < 1 || id > 6) throw InputError("RegionMap: region id outside 1..6");
      m.region.push_back(id);
    }
    for (const auto& [key, w] : j.at("weights").items()) {
      const auto q = w.at("q_e").get<std::vector<double>>();
      const auto r = w.at("r").get<std::vector<double>>();
      if (q.size() != 2 || r.size() != 2) throw InputError("RegionMap: weights need 2 entries");
      MpcWeights mw;
      mw.Q_e = Eigen::Vector2d(q[0], q[1]).asDiagonal();
      mw.R = Eigen::Vector2d(r[0], r[1]).asDiagonal();
      m.weights[std::stoi(key)] = mw;
    }
    if (j.contains("warnings")) m.warnings = j["warnings"].get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("RegionMap JSON: ") + e.what());
  }
}

void RegionMap::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_json() << "\n";
}

RegionMap RegionMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::size_t representative_node(const RegionMap& map, int id) {
  const double ds = span(map.lattice.speed_axis);
  const double df = span(map.lattice.fuel_axis);
  std::vector<std::size_t> members;
  double cs = 0.0, cf = 0.0;
  for (std::size_t k = 0; k < map.region.size(); ++k) {
    if (map.region[k] != id) continue;
    members.push_back(k);
    const auto rho = map.lattice.node(k);
    cs += rho.engine_speed / ds;
    cf += rho.fuel_rate / df;
  }
  if (members.empty()) throw InputError("representative_node: region " + std::to_string(id) + " is empty");
  cs /= static_cast<double>(members.size());
  cf /= static_cast<double>(members.size());
  std::size_t best = members.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k : members) {
    const auto rho = map.lattice.node(k);
    const double d = std::pow(rho.engine_speed / ds - cs, 2) + std::pow(rho.fuel_rate / df - cf, 2);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

RegionTuning tune_regions(const Workbench& bench, const LpvModel& model, const MpcConfig& cfg,
                          const RegionMap& map, const CalibOptions& options) {
  RegionTuning out;
  out.map = map;
  for (int id : map.region_ids()) {
    const OperatingPoint rho = map.lattice.node(representative_node(map, id));
    const auto it = map.weights.find(id);
    const MpcWeights& start = it == map.weights.end() ? cfg.weights : it->second;
    TuneResult r = tune_point(bench, model, cfg, rho, start, options);
    out.map.weights[id] = r.weights;
    out.results.emplace(id, std::move(r));
  }
  return out;
}

}  // namespace airpath
