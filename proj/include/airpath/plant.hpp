#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "airpath/config.hpp"

namespace airpath {

/// Scheduling variables: engine speed [rpm] and injected fuel [mm^3/cycle].
struct OperatingPoint {
  double engine_speed = 0.0;
  double fuel_rate = 0.0;

  friend bool operator==(const OperatingPoint&,
                         const OperatingPoint&) = default;
};

/// EGR valve [% open] and VGT vanes [% closed].
struct ActuatorInput {
  double egr_pos = 0.0;
  double vgt_pos = 0.0;

  /// Both channels clamped to [0, 100].
  ActuatorInput clamped() const;

  friend bool operator==(const ActuatorInput&, const ActuatorInput&) = default;
};

struct PlantState {
  double p_im = 0.0;         ///< intake manifold pressure [bar]
  double p_em = 0.0;         ///< exhaust manifold pressure [bar]
  double turbo_speed = 0.0;  ///< normalized turbocharger speed [-]
  double wall_temp = 0.0;    ///< lumped wall temperature [K]

  friend bool operator==(const PlantState&, const PlantState&) = default;
};

struct PlantOutput {
  double p_im = 0.0;      ///< [bar]
  double egr_rate = 0.0;  ///< w_egr / (w_egr + w_thr)
  double w_egr = 0.0;     ///< [kg/s]
  double w_thr = 0.0;     ///< [kg/s]
};

/// SteadyState pins the wall temperature to its algebraic target; Transient
/// lets it follow that target through a first-order lag.
enum class ThermalMode { SteadyState, Transient };

/// Recirculated fraction of the intake charge.  Throws DegenerateInputError
/// when both flows are zero and InputError on negative flows.
double egr_rate(double w_egr, double w_thr);

/// Every coefficient of the surrogate mean-value airpath model.  Defaults
/// are physically plausible for a ~4.5 l four-cylinder diesel; they do not
/// describe any particular engine.
struct PlantParams {
  // ambient and charge
  double p_amb = 1.013;   // bar
  double T_amb = 298.0;   // K
  double T_im = 320.0;    // K, intercooled charge temperature
  // engine
  double displacement = 4.5e-3;  // m^3
  int cylinders = 4;
  double V_im = 6.0e-3;  // m^3
  double V_em = 4.0e-3;  // m^3
  double eta_vol = 0.92;
  double eta_vol_wall = 3.0e-4;  // 1/K, loss of volumetric efficiency
  double wall_ref = 600.0;       // K
  double fuel_density = 830.0;   // kg/m^3
  double q_lhv = 42.5e6;         // J/kg
  double exhaust_heat_fraction = 0.45;
  double wall_heat_loss = 0.40;  // share of (T_ad - T_wall) lost to walls
  double wall_coupling = 0.75;   // T_wall target = T_amb + c (T_ad - T_amb)
  double thermal_tau = 30.0;     // s
  // actuators and turbocharger
  double egr_area = 2.0e-4;      // m^2 at 100 % open
  double egr_dp_reg = 0.02;      // bar, orifice smoothing near zero dp
  double turbine_area = 6.0e-4;  // m^2 with vanes fully open
  double vgt_span = 0.8;         // area fraction removed at 100 % closed
  double comp_head = 2.6;        // zero-flow pressure rise per speed^2
  double comp_slope = 6.0;       // pressure-ratio loss per (speed * kg/s)
  double eta_comp = 0.70;
  double eta_turb = 0.68;
  double turbo_inertia = 5.0e3;  // J, for normalized speed
  double turbo_friction = 600.0;  // W per speed^2
  // integration
  double substep = 1.0e-3;  // s
  // envelope
  double speed_min = 800.0;
  double speed_max = 3200.0;
  double fuel_min = 5.0;
  double fuel_max = 70.0;
  double p_max = 6.0;  // bar, saturation ceiling for both manifolds
  double wall_max = 1500.0;

  /// Reads `plant.<name>` (or bare `<name>`) keys, falling back to defaults.
  static PlantParams from_config(const Config& cfg);
  void validate() const;
};

struct StepResult {
  PlantState state;
  bool saturated = false;  ///< envelope clamp was applied
};

/// Surrogate diesel airpath: two manifold pressures (filling and emptying),
/// turbocharger speed (power balance) and a lumped wall temperature that
/// shifts volumetric efficiency and exhaust enthalpy.
///
/// Stateless apart from its parameters; all methods are const and pure.
class Plant {
 public:
  explicit Plant(PlantParams params = {});

  const PlantParams& params() const { return params_; }

  bool in_envelope(const OperatingPoint& rho) const;
  OperatingPoint clamp_to_envelope(const OperatingPoint& rho) const;

  /// Advances by `dt` (<= 20 ms) with Heun sub-steps of
  /// `params().substep`.  Envelope violations are clamped and flagged.
  StepResult step(const PlantState& state, ActuatorInput u,
                  const OperatingPoint& rho, ThermalMode mode,
                  double dt) const;

  PlantOutput output(const PlantState& state, ActuatorInput u,
                     const OperatingPoint& rho) const;

  /// Wall temperature the thermal lag relaxes towards for the given gas
  /// state.  Depends on the wall itself through volumetric efficiency.
  double wall_target(const PlantState& state, ActuatorInput u,
                     const OperatingPoint& rho) const;

  /// Solves wall = wall_target(wall) for the given gas state.
  double pinned_wall_temp(const PlantState& state, ActuatorInput u,
                          const OperatingPoint& rho) const;

  /// Steady state for fixed (rho, u).  The thermal lag has unit DC gain, so
  /// both modes share one equilibrium.  Throws ConvergenceError.
  PlantState find_equilibrium(const OperatingPoint& rho, ActuatorInput u,
                              ThermalMode mode) const;

  /// Time derivative of the full state (wall row uses the Transient lag).
  std::array<double, 4> derivative(const PlantState& state, ActuatorInput u,
                                   const OperatingPoint& rho) const;

 private:
  struct Flows;
  Flows flows(const PlantState& s, const ActuatorInput& u,
              const OperatingPoint& rho) const;
  bool saturate(PlantState& s) const;

  PlantParams params_;
};

/// Open-loop actuator schedule used to pick linearization inputs and
/// set-points: EGR closes with load, VGT opens with speed.
struct NominalActuatorMap {
  double egr_base = 60.0;
  double egr_per_load = -50.0;
  double vgt_base = 68.0;
  double vgt_per_speed = -40.0;
  double vgt_per_load = 12.0;
  double speed_ref = 1000.0;
  double speed_span = 2000.0;
  double fuel_ref = 15.0;
  double fuel_span = 45.0;

  ActuatorInput operator()(const OperatingPoint& rho) const;
  /// Reads `nominal.<name>` keys.
  static NominalActuatorMap from_config(const Config& cfg);
};

/// One row of the plant trajectory CSV.
struct PlantSample {
  double t = 0.0;
  PlantState state;
  ActuatorInput u;
  OperatingPoint rho;
  double egr_rate = 0.0;
};

/// Header: t,p_im,p_em,turbo_speed,wall_temp,egr_pos,vgt_pos,engine_speed,
/// fuel_rate,egr_rate
void write_plant_trajectory(const std::filesystem::path& path,
                            const std::vector<PlantSample>& samples);
std::vector<PlantSample> read_plant_trajectory(
    const std::filesystem::path& path);

}  // namespace airpath
