#include "airpath/grid.hpp"

#include <algorithm>

#include "airpath/errors.hpp"

namespace airpath {
namespace {

void check_axis(const std::vector<double>& axis, const char* name) {
  if (axis.empty()) throw InputError(std::string(name) + " axis is empty");
  for (std::size_t i = 1; i < axis.size(); ++i) {
    if (!(axis[i] > axis[i - 1])) {
      throw InputError(std::string(name) + " axis is not strictly increasing");
    }
  }
}

// Lower cell index and fractional position of x on a sorted axis.
std::pair<std::size_t, double> locate(const std::vector<double>& axis, double x) {
  if (axis.size() == 1) return {0, 0.0};
  x = std::clamp(x, axis.front(), axis.back());
  auto it = std::upper_bound(axis.begin(), axis.end(), x);
  std::size_t i = static_cast<std::size_t>(it - axis.begin());
  i = std::min(i == 0 ? 0 : i - 1, axis.size() - 2);
  const double t = (x - axis[i]) / (axis[i + 1] - axis[i]);
  return {i, t};
}

}  // namespace

void Lattice::validate() const {
  check_axis(speed_axis, "speed");
  check_axis(fuel_axis, "fuel");
}

OperatingPoint Lattice::node(std::size_t flat) const {
  return {speed_axis.at(flat / fuel_axis.size()),
          fuel_axis.at(flat % fuel_axis.size())};
}

std::vector<OperatingPoint> Lattice::nodes() const {
  std::vector<OperatingPoint> out;
  out.reserve(size());
  for (std::size_t k = 0; k < size(); ++k) out.push_back(node(k));
  return out;
}

BilinearStencil bilinear_stencil(const Lattice& lattice,
                                 const OperatingPoint& rho) {
  const auto [i, s] = locate(lattice.speed_axis, rho.engine_speed);
  const auto [j, t] = locate(lattice.fuel_axis, rho.fuel_rate);
  const std::size_t i1 = std::min(i + 1, lattice.speed_axis.size() - 1);
  const std::size_t j1 = std::min(j + 1, lattice.fuel_axis.size() - 1);

  BilinearStencil st;
  st.cell_speed = i;
  st.cell_fuel = j;
  st.node = {lattice.index(i, j), lattice.index(i, j1), lattice.index(i1, j),
             lattice.index(i1, j1)};
  st.weight = {(1.0 - s) * (1.0 - t), (1.0 - s) * t, s * (1.0 - t), s * t};
  return st;
}

double interpolate(const Lattice& lattice, const std::vector<double>& values,
                   const OperatingPoint& rho) {
  if (values.size() != lattice.size()) {
    throw InputError("interpolate: table size does not match lattice");
  }
  const auto st = bilinear_stencil(lattice, rho);
  double v = 0.0;
  for (int c = 0; c < 4; ++c) {
    if (st.weight[c] != 0.0) v += st.weight[c] * values[st.node[c]];
  }
  return v;
}

Lattice Lattice::from_config(const Config& cfg) {
  Lattice l;
  l.speed_axis = cfg.get_doubles("grid.speed_axis", {1000.0, 1500.0, 2000.0, 2500.0, 3000.0});
  l.fuel_axis = cfg.get_doubles("grid.fuel_axis", {15.0, 30.0, 45.0, 60.0});
  l.validate();
  return l;
}

}  // namespace airpath
