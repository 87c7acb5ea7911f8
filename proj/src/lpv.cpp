#include "airpath/lpv.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "airpath/csv.hpp"
#include "airpath/errors.hpp"
#include "json.hpp"

namespace airpath {

using nlohmann::json;

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::A: return "A";
    case ModelVariant::B: return "B";
    case ModelVariant::C: return "C";
  }
  return "?";
}

ModelVariant parse_variant(const std::string& text) {
  if (text.size() == 1) {
    switch (std::toupper(static_cast<unsigned char>(text[0]))) {
      case 'A': return ModelVariant::A;
      case 'B': return ModelVariant::B;
      case 'C': return ModelVariant::C;
    }
  }
  throw InputError("unknown model variant '" + text + "'");
}

int input_count(ModelVariant v) { return v == ModelVariant::C ? 3 : 2; }

ThermalMode thermal_mode(ModelVariant v) {
  return v == ModelVariant::A ? ThermalMode::SteadyState : ThermalMode::Transient;
}

double spectral_radius(const StateMatrix& A) {
  const double half_tr = 0.5 * A.trace();
  const double det = A.determinant();
  const double disc = half_tr * half_tr - det;
  if (disc < 0.0) return std::sqrt(det);  // complex pair, |lambda|^2 = det
  const double r = std::sqrt(disc);
  return std::max(std::abs(half_tr + r), std::abs(half_tr - r));
}

ScheduledModel ScheduledModel::without_fuel_input() const {
  if (inputs() != 3) return *this;
  ScheduledModel out = *this;
  out.B = B.leftCols(2);
  out.u_ss = u_ss.head(2);
  return out;
}

LpvModel::LpvModel(Lattice lattice, std::vector<LinearSubmodel> submodels,
                   ModelVariant variant, double dt)
    : lattice_(std::move(lattice)),
      submodels_(std::move(submodels)),
      variant_(variant),
      dt_(dt) {
  lattice_.validate();
  if (submodels_.size() != lattice_.size()) {
    throw InputError("LpvModel: lattice is incomplete");
  }
  if (!(dt_ > 0.0)) throw InputError("LpvModel: dt must be positive");
  const int m = submodels_.front().inputs();
  if (m != input_count(variant_)) {
    throw InputError("LpvModel: input count does not match variant " +
                     to_string(variant_));
  }
  for (std::size_t k = 0; k < submodels_.size(); ++k) {
    const auto& sm = submodels_[k];
    if (sm.inputs() != m || sm.u_ss.size() != m) {
      throw InputError("LpvModel: submodels disagree on input count");
    }
    const auto node = lattice_.node(k);
    if (!(sm.rho == node)) {
      throw InputError("LpvModel: submodel operating point is off its node");
    }
  }
}

ScheduledModel LpvModel::schedule(const OperatingPoint& rho) const {
  const auto st = bilinear_stencil(lattice_, rho);
  const int m = inputs();
  ScheduledModel out;
  out.A.setZero();
  out.B = InputMatrix::Zero(kStates, m);
  out.x_ss.setZero();
  out.u_ss = InputVector::Zero(m);
  for (int c = 0; c < 4; ++c) {
    const double w = st.weight[c];
    if (w == 0.0) continue;
    const auto& sm = submodels_[st.node[c]];
    out.A += w * sm.A;
    out.B += w * sm.B;
    out.x_ss += w * sm.x_ss;
    out.u_ss += w * sm.u_ss;
  }
  out.rho = {std::clamp(rho.engine_speed, lattice_.speed_axis.front(),
                        lattice_.speed_axis.back()),
             std::clamp(rho.fuel_rate, lattice_.fuel_axis.front(),
                        lattice_.fuel_axis.back())};
  return out;
}

std::string LpvModel::to_json() const {
  json doc;
  doc["format_version"] = kFormatVersion;
  doc["variant"] = to_string(variant_);
  doc["dt"] = dt_;
  doc["inputs"] = inputs();
  doc["speed_axis"] = lattice_.speed_axis;
  doc["fuel_axis"] = lattice_.fuel_axis;
  json subs = json::array();
  for (const auto& sm : submodels_) {
    json j;
    j["engine_speed"] = sm.rho.engine_speed;
    j["fuel_rate"] = sm.rho.fuel_rate;
    std::vector<double> a, b;
    for (int r = 0; r < kStates; ++r) {
      for (int c = 0; c < kStates; ++c) a.push_back(sm.A(r, c));
      for (int c = 0; c < sm.inputs(); ++c) b.push_back(sm.B(r, c));
    }
    j["A"] = a;
    j["B"] = b;
    j["x_ss"] = std::vector<double>{sm.x_ss[0], sm.x_ss[1]};
    j["u_ss"] = std::vector<double>(sm.u_ss.data(), sm.u_ss.data() + sm.u_ss.size());
    subs.push_back(std::move(j));
  }
  doc["submodels"] = std::move(subs);
  return doc.dump(1);
}

LpvModel LpvModel::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("LPV model JSON: ") + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != kFormatVersion) {
      throw InputError("LPV model JSON: unsupported format_version");
    }
    Lattice lattice{doc.at("speed_axis").get<std::vector<double>>(),
                    doc.at("fuel_axis").get<std::vector<double>>()};
    const auto variant = parse_variant(doc.at("variant").get<std::string>());
    const int m = doc.at("inputs").get<int>();
    std::vector<LinearSubmodel> subs;
    for (const auto& j : doc.at("submodels")) {
      LinearSubmodel sm;
      sm.rho = {j.at("engine_speed").get<double>(), j.at("fuel_rate").get<double>()};
      const auto a = j.at("A").get<std::vector<double>>();
      const auto b = j.at("B").get<std::vector<double>>();
      const auto xs = j.at("x_ss").get<std::vector<double>>();
      const auto us = j.at("u_ss").get<std::vector<double>>();
      if (a.size() != 4 || b.size() != static_cast<std::size_t>(2 * m) ||
          xs.size() != 2 || us.size() != static_cast<std::size_t>(m)) {
        throw InputError("LPV model JSON: matrix sizes do not match inputs");
      }
      sm.B = InputMatrix::Zero(kStates, m);
      sm.u_ss = InputVector::Zero(m);
      for (int r = 0; r < kStates; ++r) {
        for (int c = 0; c < kStates; ++c) sm.A(r, c) = a[r * 2 + c];
        for (int c = 0; c < m; ++c) sm.B(r, c) = b[r * m + c];
      }
      sm.x_ss = StateVector(xs[0], xs[1]);
      for (int c = 0; c < m; ++c) sm.u_ss[c] = us[c];
      subs.push_back(std::move(sm));
    }
    return LpvModel(std::move(lattice), std::move(subs), variant,
                    doc.at("dt").get<double>());
  } catch (const json::exception& e) {
    throw InputError(std::string("LPV model JSON: ") + e.what());
  }
}

void LpvModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_json() << '\n';
}

LpvModel LpvModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void LpvModel::write_lattice_csv(const std::filesystem::path& path) const {
  const int m = inputs();
  CsvTable t;
  t.header = {"engine_speed", "fuel_rate", "a11", "a12", "a21", "a22"};
  for (int r = 1; r <= kStates; ++r) {
    for (int c = 1; c <= m; ++c) {
      t.header.push_back("b" + std::to_string(r) + std::to_string(c));
    }
  }
  t.header.insert(t.header.end(), {"x_ss_p_im", "x_ss_egr_rate", "u_ss_egr_pos",
                                   "u_ss_vgt_pos"});
  if (m == 3) t.header.push_back("u_ss_fuel_rate");
  for (const auto& sm : submodels_) {
    std::vector<double> row{sm.rho.engine_speed, sm.rho.fuel_rate, sm.A(0, 0),
                            sm.A(0, 1), sm.A(1, 0), sm.A(1, 1)};
    for (int r = 0; r < kStates; ++r) {
      for (int c = 0; c < m; ++c) row.push_back(sm.B(r, c));
    }
    row.push_back(sm.x_ss[0]);
    row.push_back(sm.x_ss[1]);
    for (int c = 0; c < m; ++c) row.push_back(sm.u_ss[c]);
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

StateVector predict_absolute(const ScheduledModel& sm, const StateVector& x,
                             const InputVector& u) {
  if (u.size() != sm.inputs()) {
    throw InputError("predict_absolute: input dimension does not match model");
  }
  return sm.x_ss + sm.A * (x - sm.x_ss) + sm.B * (u - sm.u_ss);
}

StateVector predict_rate(const ScheduledModel& sm, const StateVector& dx,
                         const InputVector& du) {
  if (du.size() != sm.inputs()) {
    throw InputError("predict_rate: input dimension does not match model");
  }
  return sm.A * dx + sm.B * du;
}

}  // namespace airpath
