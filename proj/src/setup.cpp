#include "airpath/setup.hpp"

#include <filesystem>

namespace airpath {

Config load_config(const std::optional<std::filesystem::path>& path) {
  Config cfg;
#ifdef AIRPATH_DEFAULT_CONFIG
  if (std::filesystem::exists(AIRPATH_DEFAULT_CONFIG)) cfg = Config::load(AIRPATH_DEFAULT_CONFIG);
#endif
  if (path) cfg.merge(Config::load(*path));
  return cfg;
}

Setup make_setup(const Config& cfg, std::uint64_t seed) {
  Setup s{.config = cfg,
          .plant_params = PlantParams::from_config(cfg),
          .lattice = Lattice::from_config(cfg),
          .identification = IdentificationOptions::from_config(cfg),
          .mpc = MpcConfig::from_config(cfg),
          .calib = CalibOptions::from_config(cfg),
          .cycles = CycleOptions::from_config(cfg),
          .bench = Workbench{Plant(PlantParams::from_config(cfg)), {}, {}, ThermalMode::Transient}};
  s.identification.seed = seed;
  s.mpc.validate();
  const Plant& plant = s.bench.plant;
  auto setpoints = build_setpoint_tables(plant, s.lattice, s.identification.nominal);
  setpoints.check_bounds(s.mpc.x_min, s.mpc.x_max);
  auto ff = build_ff_table(plant, setpoints);
  s.bench.setpoints = std::move(setpoints);
  s.bench.feedforward = std::move(ff);
  return s;
}

LpvModel obtain_model(const Setup& setup, ModelVariant variant,
                      const std::filesystem::path& cache) {
  if (!cache.empty() && std::filesystem::exists(cache)) return LpvModel::load(cache);
  auto result = build_lpv_variant(setup.bench.plant, variant, setup.lattice, setup.identification);
  if (!cache.empty()) result.model.save(cache);
  return std::move(result.model);
}

}  // namespace airpath
