#pragma once

#include <filesystem>
#include <vector>

#include "airpath/grid.hpp"
#include "airpath/linear_model.hpp"

namespace airpath {

/// (A, B, x_ss, u_ss) evaluated at one operating point.  The operating point
/// is held fixed over a prediction horizon.
struct ScheduledModel {
  StateMatrix A = StateMatrix::Zero();
  InputMatrix B = InputMatrix::Zero(kStates, 2);
  StateVector x_ss = StateVector::Zero();
  InputVector u_ss = InputVector::Zero(2);
  OperatingPoint rho;

  int inputs() const { return static_cast<int>(B.cols()); }

  /// Drops the trailing fuel column of B and entry of u_ss.  With the
  /// operating point frozen over the horizon the fuel increment is zero, so
  /// the column never contributes to a rate prediction.
  ScheduledModel without_fuel_input() const;
};

/// Lattice of identified submodels with bilinear scheduling.  Immutable once
/// constructed.
class LpvModel {
 public:
  static constexpr int kFormatVersion = 1;

  /// Throws InputError unless the lattice is complete, every submodel sits
  /// on its node, and all share the same input count.
  LpvModel(Lattice lattice, std::vector<LinearSubmodel> submodels,
           ModelVariant variant, double dt);

  const Lattice& lattice() const { return lattice_; }
  const std::vector<LinearSubmodel>& submodels() const { return submodels_; }
  const LinearSubmodel& submodel(std::size_t i_speed, std::size_t j_fuel) const {
    return submodels_.at(lattice_.index(i_speed, j_fuel));
  }
  ModelVariant variant() const { return variant_; }
  double dt() const { return dt_; }
  int inputs() const { return submodels_.front().inputs(); }

  /// Elementwise bilinear interpolation over the enclosing cell; rho outside
  /// the lattice is clamped to the boundary.
  ScheduledModel schedule(const OperatingPoint& rho) const;

  void save(const std::filesystem::path& path) const;
  static LpvModel load(const std::filesystem::path& path);
  std::string to_json() const;
  static LpvModel from_json(const std::string& text);

  /// One row per node: rho, A and B flattened row-major, x_ss, u_ss.
  void write_lattice_csv(const std::filesystem::path& path) const;

 private:
  Lattice lattice_;
  std::vector<LinearSubmodel> submodels_;
  ModelVariant variant_;
  double dt_;
};

/// x_ss + A (x - x_ss) + B (u - u_ss).
StateVector predict_absolute(const ScheduledModel& sm, const StateVector& x,
                             const InputVector& u);

/// A dx + B du.
StateVector predict_rate(const ScheduledModel& sm, const StateVector& dx,
                         const InputVector& du);

}  // namespace airpath
