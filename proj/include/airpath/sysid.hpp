#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "airpath/lpv.hpp"
#include "airpath/plant.hpp"

namespace airpath {

/// Input/output record at 20 ms.  outputs[k] is measured at the start of
/// interval k (after inputs[k-1] was held), inputs[k] is applied over it.
/// rho_series[k] carries the fuel actually injected during interval k.
struct Experiment {
  OperatingPoint rho;
  std::vector<ActuatorInput> actuators;
  std::vector<OperatingPoint> rho_series;
  std::vector<StateVector> outputs;
  double dt = 0.02;
  std::uint64_t seed = 0;

  std::size_t size() const { return outputs.size(); }
  /// [egr, vgt] or [egr, vgt, fuel] for sample k.
  InputVector input(std::size_t k, int inputs) const;
  /// Throws InputError on unequal lengths, fewer than `min_samples`
  /// samples or non-positive dt.
  void validate(std::size_t min_samples = 200) const;
};

/// Linearization point of one lattice node.
struct OperatingEquilibrium {
  OperatingPoint rho;
  ActuatorInput u;
  PlantState state;
  StateVector x_ss = StateVector::Zero();

  InputVector u_ss(int inputs) const;
};

/// Equilibrium of `plant` at (rho, u) together with its measured outputs.
OperatingEquilibrium make_equilibrium(const Plant& plant, const OperatingPoint& rho,
                                      const ActuatorInput& u);

struct PerturbationOptions {
  double amplitude = 0.10;  ///< fraction of each steady-state level
  /// Per-channel clipping range; missing channels default to [0, 100].
  std::vector<double> lower;
  std::vector<double> upper;
};

struct Perturbation {
  std::vector<InputVector> samples;
  std::size_t clipped = 0;  ///< levels that hit a bound
};

/// Piecewise-constant random levels u_ss * (1 + U(-a, a)) per channel,
/// `n_steps` levels held `hold` samples each.
Perturbation generate_perturbation(const InputVector& u_ss, int n_steps, int hold,
                                   std::uint64_t seed,
                                   const PerturbationOptions& options = {});

/// Runs the plant from `eq.state` under `inputs` (2 or 3 channels; the third
/// replaces the fuel rate).
Experiment simulate_experiment(const Plant& plant, const OperatingEquilibrium& eq,
                               const std::vector<InputVector>& inputs, ThermalMode mode,
                               std::uint64_t seed, double dt = 0.02);

struct FitDiagnostics {
  std::size_t samples = 0;
  double residual_sum_of_squares = 0.0;
  double spectral_radius_raw = 0.0;
  bool stabilized = false;
  std::vector<double> singular_values;  ///< of the column-scaled regressor
};

/// Equation-error least squares for x+ - x_ss = A (x - x_ss) + B (u - u_ss).
/// Throws IdentifiabilityError naming the unexcited regressor directions.
/// A fitted A with spectral radius >= 1 has its eigenvalues pulled in to
/// modulus 0.995.
LinearSubmodel fit_submodel(const std::vector<Experiment>& experiments,
                            ModelVariant variant, const StateVector& x_ss,
                            const InputVector& u_ss, FitDiagnostics* diag = nullptr);

/// Sum of squared one-step residuals of `model` over the experiments.
double residual_sum_of_squares(const std::vector<Experiment>& experiments,
                               const LinearSubmodel& model);

struct ValidationReport {
  Eigen::Vector2d mean_abs_err = Eigen::Vector2d::Zero();
  Eigen::Vector2d std_abs_err = Eigen::Vector2d::Zero();
  std::size_t samples = 0;
};

/// Per-channel mean and population standard deviation of |pred - meas|.
ValidationReport error_metrics(const std::vector<StateVector>& predicted,
                               const std::vector<StateVector>& measured);

/// Open-loop rollout from outputs[0] under the recorded inputs.  The LPV
/// overload schedules with rho_series[k] at every step.
std::vector<StateVector> simulate_model(const LinearSubmodel& model, const Experiment& data);
std::vector<StateVector> simulate_model(const LpvModel& model, const Experiment& data);

/// Errors over samples 1..n-1 of an open-loop rollout.
ValidationReport validate_model(const LinearSubmodel& model, const Experiment& data);
ValidationReport validate_model(const LpvModel& model, const Experiment& data);

struct IdentificationOptions {
  double train_seconds = 120.0;
  double validation_seconds = 60.0;
  int hold = 100;
  double amplitude = 0.10;
  double dt = 0.02;
  std::uint64_t seed = 1;
  NominalActuatorMap nominal;

  /// Reads `sysid.*` and `nominal.*` keys.
  static IdentificationOptions from_config(const Config& cfg);
};

struct PointReport {
  OperatingPoint rho;
  FitDiagnostics fit;
  std::size_t clipped = 0;
  ValidationReport validation;
};

struct IdentificationResult {
  LpvModel model;
  std::vector<PointReport> points;
};

/// Deterministic per-purpose seed derived from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Identifies every lattice node in the variant's thermal mode and
/// assembles the LPV model.  A per-node failure is rethrown with the same
/// error type and the node appended to its message.
IdentificationResult build_lpv_variant(const Plant& plant, ModelVariant variant,
                                       const Lattice& lattice,
                                       const IdentificationOptions& options);

}  // namespace airpath
