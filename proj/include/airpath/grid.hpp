#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "airpath/plant.hpp"

namespace airpath {

/// Rectangular lattice over (engine_speed, fuel_rate).  Node (i, j) has
/// flat index i * fuel_axis.size() + j.
struct Lattice {
  std::vector<double> speed_axis;
  std::vector<double> fuel_axis;

  /// Throws InputError unless both axes are non-empty and strictly increasing.
  void validate() const;

  std::size_t size() const { return speed_axis.size() * fuel_axis.size(); }
  std::size_t index(std::size_t i_speed, std::size_t j_fuel) const {
    return i_speed * fuel_axis.size() + j_fuel;
  }
  OperatingPoint node(std::size_t flat) const;
  std::vector<OperatingPoint> nodes() const;

  /// `grid.speed_axis` and `grid.fuel_axis` as comma lists; defaults to a
  /// 5 x 4 mid-envelope lattice.
  static Lattice from_config(const Config& cfg);
};

/// Four corner nodes and their bilinear weights.  Weights are exactly 1 and
/// 0 when the query sits on a node, so interpolation reproduces node values
/// bit for bit.
struct BilinearStencil {
  std::array<std::size_t, 4> node{};
  std::array<double, 4> weight{};
  std::size_t cell_speed = 0;  ///< lower-left cell indices
  std::size_t cell_fuel = 0;
};

/// Queries outside the lattice are clamped to its boundary.
BilinearStencil bilinear_stencil(const Lattice& lattice,
                                 const OperatingPoint& rho);

/// Bilinear interpolation of a scalar-per-node table.
double interpolate(const Lattice& lattice, const std::vector<double>& values,
                   const OperatingPoint& rho);

}  // namespace airpath
