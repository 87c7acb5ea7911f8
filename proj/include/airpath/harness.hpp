#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "airpath/grid.hpp"
#include "airpath/mpc.hpp"
#include "airpath/plant.hpp"
#include "airpath/sysid.hpp"

namespace airpath {

/// (p_im, egr_rate) targets per lattice node, bilinear in between.
struct SetpointTables {
  Lattice lattice;
  std::vector<double> p_im;
  std::vector<double> egr_rate;

  StateVector at(const OperatingPoint& rho) const;
  StateVector node(std::size_t flat) const { return {p_im.at(flat), egr_rate.at(flat)}; }
  /// Throws InputError if any node target lies outside [x_min, x_max].
  void check_bounds(const Eigen::Vector2d& x_min, const Eigen::Vector2d& x_max) const;
};

/// Targets are the plant's own equilibrium outputs under the nominal map.
SetpointTables build_setpoint_tables(const Plant& plant, const Lattice& lattice,
                                     const NominalActuatorMap& nominal);

struct FeedforwardTable {
  Lattice lattice;
  std::vector<ActuatorInput> u;

  ActuatorInput at(const OperatingPoint& rho) const;
};

/// Actuator positions whose open-loop equilibrium at rho meets `target`,
/// by damped Newton from `start`.  `residual` receives the largest relative
/// output error left.
ActuatorInput invert_equilibrium(const Plant& plant, const OperatingPoint& rho,
                                 const StateVector& target, ActuatorInput start,
                                 double* residual = nullptr);

/// Damped Newton on (egr_pos, vgt_pos) from (50, 50) per node so that the
/// open-loop equilibrium meets the node targets within `tolerance`
/// (relative).  Throws ConvergenceError listing every failed node.
FeedforwardTable build_ff_table(const Plant& plant, const SetpointTables& setpoints,
                                double tolerance = 0.02);

enum class CycleKind { StepStaircase, SyntheticUrban, SyntheticHighway };
std::string to_string(CycleKind kind);
/// Accepts staircase / urban / highway.
CycleKind parse_cycle(const std::string& text);

struct CycleOptions {
  double dt = 0.02;
  double max_speed_step = 25.0;  ///< rpm per sample
  double max_fuel_step = 1.5;    ///< mm3/cycle per sample
  double speed_lo = 1000.0;
  double speed_hi = 3000.0;
  double fuel_lo = 15.0;
  double fuel_hi = 60.0;
  int staircase_levels = 4;

  static CycleOptions from_config(const Config& cfg);
};

struct DriveCycle {
  std::string name;
  double dt = 0.02;
  std::vector<OperatingPoint> points;

  double duration() const { return dt * static_cast<double>(points.size()); }
};

/// Rate-limited synthetic (speed, fuel) profile.  Throws InputError for
/// durations below 60 s.
DriveCycle make_cycle(CycleKind kind, double duration, std::uint64_t seed,
                      const CycleOptions& options = {});

/// Constant operating point for `duration` seconds.
DriveCycle constant_cycle(const OperatingPoint& rho, double duration, double dt = 0.02);

struct SimRecord {
  double t = 0.0;
  OperatingPoint rho;
  StateVector target = StateVector::Zero();
  StateVector x = StateVector::Zero();
  ActuatorInput u;
  ActuatorInput u_ff;
  Eigen::Vector2d du = Eigen::Vector2d::Zero();
  Eigen::Vector2d slack = Eigen::Vector2d::Zero();
  int status = 0;  ///< QpStatus code, -1 for feedforward only
  double kkt_residual = 0.0;
  int active_constraints = 0;
  double solve_seconds = 0.0;
  bool fallback = false;
};

struct SimLog {
  std::string label;
  double dt = 0.02;
  std::vector<SimRecord> records;

  void write_csv(const std::filesystem::path& path) const;
  static SimLog read_csv(const std::filesystem::path& path);
};

/// Everything a closed-loop run needs besides the controller.
struct Workbench {
  Plant plant;
  SetpointTables setpoints;
  FeedforwardTable feedforward;
  ThermalMode mode = ThermalMode::Transient;
};

/// Runs `cycle` with `controller` (nullptr runs feedforward only) from the
/// plant settled on the first point's set-points.  Throws EnvelopeError if the
/// plant saturates.
SimLog run_cycle(const Workbench& bench, MpcController* controller, const DriveCycle& cycle,
                 const std::string& label = {});

/// Operating-point step at `step_time` from a plant settled at rho_from.
SimLog run_step_test(const Workbench& bench, MpcController* controller,
                     const OperatingPoint& rho_from, const OperatingPoint& rho_to,
                     double duration, double step_time = 1.0);

/// Feedforward inputs with +-amplitude uniform noise each sample, logged as
/// an identification-style record (Transient plant by default).
Experiment make_validation_record(const Workbench& bench, const DriveCycle& cycle,
                                  std::uint64_t seed, double amplitude = 0.05);

struct ChannelStats {
  Eigen::Vector2d mean_abs = Eigen::Vector2d::Zero();
  Eigen::Vector2d std_abs = Eigen::Vector2d::Zero();
};

struct TrackingReport {
  std::string reference;
  std::vector<std::string> order;
  std::map<std::string, ChannelStats> stats;
  /// Signed percentage change of mean and std vs the reference, per channel.
  std::map<std::string, Eigen::Vector4d> delta_percent;

  std::string to_text() const;
  std::string to_json() const;
};

/// |x - target| statistics per log over records with t in [t_begin, t_end].
/// Throws InputError if logs differ in length or timestamps, or if the
/// reference is missing.
TrackingReport tracking_report(const std::vector<SimLog>& logs, const std::string& reference,
                               double t_begin = 0.0,
                               double t_end = std::numeric_limits<double>::infinity());

}  // namespace airpath
