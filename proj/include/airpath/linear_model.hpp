#pragma once

#include <Eigen/Core>
#include <string>

#include "airpath/plant.hpp"

namespace airpath {

// Airpath states are (p_im [bar], egr_rate [-]); inputs are (egr_pos, vgt_pos)
// with an optional trailing fuel_rate channel.
constexpr int kStates = 2;
constexpr int kMaxInputs = 3;

using StateVector = Eigen::Vector2d;
using StateMatrix = Eigen::Matrix2d;
using InputVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxInputs, 1>;
using InputMatrix =
    Eigen::Matrix<double, kStates, Eigen::Dynamic, 0, kStates, kMaxInputs>;

/// Which data and input set a model was identified from.
///   A: SteadyState thermal data, 2 inputs
///   B: Transient thermal data, 2 inputs
///   C: Transient thermal data, 3 inputs (fuel rate appended)
enum class ModelVariant { A, B, C };

std::string to_string(ModelVariant v);
/// Accepts "A"/"B"/"C" (case-insensitive).  Throws InputError otherwise.
ModelVariant parse_variant(const std::string& text);
int input_count(ModelVariant v);
ThermalMode thermal_mode(ModelVariant v);

/// Deviation model x+ - x_ss = A (x - x_ss) + B (u - u_ss) identified at one
/// operating point, discrete time at the control period.
struct LinearSubmodel {
  StateMatrix A = StateMatrix::Zero();
  InputMatrix B = InputMatrix::Zero(kStates, 2);
  StateVector x_ss = StateVector::Zero();
  InputVector u_ss = InputVector::Zero(2);
  OperatingPoint rho;

  int inputs() const { return static_cast<int>(B.cols()); }
};

/// Spectral radius of a 2x2 matrix.
double spectral_radius(const StateMatrix& A);

}  // namespace airpath
