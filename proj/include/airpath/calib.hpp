#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "airpath/harness.hpp"
#include "airpath/mpc.hpp"

namespace airpath {

/// Desired closed-loop step shape: second order with natural frequency
/// 1/tau and damping set by the allowed overshoot.
struct ReferenceSpec {
  double tau = 0.5;        ///< s
  double overshoot = 0.05; ///< fraction
  double dt = 0.02;

  void validate() const;
  double damping() const;
  double natural_frequency() const { return 1.0 / tau; }
  /// 90 % rise time of the desired response, the tuner's speed target.
  double response_time() const;
};

/// Step response of the desired second-order system from 0 to r_step,
/// `samples` points starting at t = 0.
std::vector<double> desired_response(const ReferenceSpec& spec, double r_step,
                                     std::size_t samples);

struct StepMetrics {
  double response_time_90 = std::numeric_limits<double>::infinity();
  double overshoot = 0.0;
  double steady_error = 0.0;
  bool reached = false;  ///< false means response_time_90 is the +inf sentinel
};

/// Sample 0 of `traj` is the step instant.  Throws InputError when
/// target == initial and SettleError when the last 10 % of samples leave
/// the 2 % band.
StepMetrics measure_step_metrics(const std::vector<double>& traj, double dt, double initial,
                                 double target);

struct CalibOptions {
  ReferenceSpec spec_pim;
  ReferenceSpec spec_egr;
  double fuel_step = 10.0;      ///< mm3/cycle between tip-in and tip-out levels
  double step_duration = 12.0;  ///< s, including 1 s before the step
  int budget = 30;              ///< closed-loop evaluations per point
  double weight_min = 1e-4;
  double weight_max = 1e6;

  /// Reads `calib.*` keys.
  static CalibOptions from_config(const Config& cfg);
};

/// Worst case over the tip-in and tip-out tests.
struct PointMetrics {
  StepMetrics p_im;
  StepMetrics egr_rate;
};

struct TuneIteration {
  int iteration = 0;
  MpcWeights weights;
  PointMetrics metrics;
  bool met = false;
  double score = 0.0;       ///< normalized target excess, 0 when met
  double best_score = 0.0;  ///< running minimum
};

struct TuneResult {
  OperatingPoint rho;
  MpcWeights weights;  ///< best found
  PointMetrics metrics;
  bool met = false;
  int evaluations = 0;
  std::vector<TuneIteration> trace;
  std::string unmet;  ///< empty when met

  void write_trace_csv(const std::filesystem::path& path) const;
};

/// Tip-in and tip-out fuel steps around rho with fixed weights.
PointMetrics evaluate_point(const Workbench& bench, const LpvModel& model, const MpcConfig& cfg,
                            const OperatingPoint& rho, const MpcWeights& weights,
                            const CalibOptions& options);

/// Channel-by-channel x2 / /2 search on the diagonal weights starting from
/// `initial`.  Never throws on an unmet target; the result says so.
TuneResult tune_point(const Workbench& bench, const LpvModel& model, const MpcConfig& cfg,
                      const OperatingPoint& rho, const MpcWeights& initial,
                      const CalibOptions& options);

struct RegionThresholds {
  double speed_split = 0.0;
  double fuel_split = 0.0;
  double egr_split = 0.0;
};

/// Operating-region grouping of the lattice with one weight pair per region.
struct RegionMap {
  RegionThresholds thresholds;
  Lattice lattice;
  std::vector<int> region;  ///< per lattice node, 1..6
  std::map<int, MpcWeights> weights;
  std::vector<std::string> warnings;

  /// Region of the nearest lattice node.
  int region_at(const OperatingPoint& rho) const;
  std::vector<int> region_ids() const;
  /// Weights of region_at(rho), or `fallback` when the region has none.
  WeightSchedule schedule(const MpcWeights& fallback) const;

  std::string to_json() const;
  static RegionMap from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static RegionMap load(const std::filesystem::path& path);
};

/// Median of each axis and of the EGR-rate set-points.
RegionThresholds median_thresholds(const Lattice& lattice, const std::vector<double>& egr_setpoints);

/// Regions 1..6: (speed, fuel, egr) low/high triples LLL, LLH, LHL, HLL,
/// HLH, HHL.  A value equal to its split counts as low.  The two missing
/// triples go to the nearest listed region in range-normalized units.
RegionMap assign_regions(const Lattice& lattice, const std::vector<double>& egr_setpoints,
                         const RegionThresholds& thresholds);
RegionMap assign_regions(const Lattice& lattice, const std::vector<double>& egr_setpoints);

/// Lattice node of `id` nearest the region's centroid in range-normalized
/// (speed, fuel) units.
std::size_t representative_node(const RegionMap& map, int id);

struct RegionTuning {
  RegionMap map;
  std::map<int, TuneResult> results;
};

/// One tune_point per region at its representative node.
RegionTuning tune_regions(const Workbench& bench, const LpvModel& model, const MpcConfig& cfg,
                          const RegionMap& map, const CalibOptions& options);

}  // namespace airpath
