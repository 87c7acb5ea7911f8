#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "airpath/calib.hpp"
#include "airpath/config.hpp"
#include "airpath/harness.hpp"
#include "airpath/mpc.hpp"
#include "airpath/sysid.hpp"

namespace airpath {

/// Everything the workflow derives from one configuration: plant, lattice,
/// set-point and feedforward tables, and the per-stage options.
struct Setup {
  Config config;
  PlantParams plant_params;
  Lattice lattice;
  IdentificationOptions identification;
  MpcConfig mpc;
  CalibOptions calib;
  CycleOptions cycles;
  Workbench bench;
};

/// Built-in defaults, then the file at `path` when given.
Config load_config(const std::optional<std::filesystem::path>& path);

/// `seed` replaces sysid.seed so a single value drives every experiment.
Setup make_setup(const Config& cfg, std::uint64_t seed);

/// Identified model for `variant`, read from `cache` when it exists and
/// written there otherwise (empty path disables caching).
LpvModel obtain_model(const Setup& setup, ModelVariant variant,
                      const std::filesystem::path& cache = {});

}  // namespace airpath
