#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "airpath/config.hpp"
#include "airpath/csv.hpp"
#include "airpath/errors.hpp"
#include "airpath/grid.hpp"
#include "airpath/plant.hpp"
#include "airpath/plot.hpp"
#include "airpath/setup.hpp"

using namespace airpath;

TEST(Config, SectionsCommentsAndLists) {
  const auto cfg = Config::parse(
      "top = 1\n# comment\n[plant]\nV_im = 7e-3   # inline\n\n[grid]\nfuel_axis = 10, 20 ,30\n");
  EXPECT_EQ(cfg.get_double("top", 0), 1.0);
  EXPECT_EQ(cfg.get_double("plant.V_im", 0), 7e-3);
  EXPECT_EQ(cfg.get_doubles("grid.fuel_axis", {}), (std::vector<double>{10, 20, 30}));
  EXPECT_EQ(cfg.get_double("missing", 4.5), 4.5);
  EXPECT_FALSE(cfg.contains("plant.V_em"));
}

TEST(Config, MergeLaterWinsAndBadValuesThrow) {
  auto a = Config::parse("[mpc]\nhorizon = 50\n");
  a.merge(Config::parse("[mpc]\nhorizon = 20\n"));
  EXPECT_EQ(a.get_int("mpc.horizon", 0), 20);
  a.set("mpc.horizon", "abc");
  EXPECT_THROW(a.get_int("mpc.horizon", 0), InputError);
}

TEST(Config, ShippedDefaultsMatchBuiltIns) {
  const Config cfg = load_config(std::nullopt);
  ASSERT_TRUE(cfg.contains("plant.turbo_inertia"));
  const auto p = PlantParams::from_config(cfg);
  const PlantParams d;
  EXPECT_EQ(p.turbo_inertia, d.turbo_inertia);
  EXPECT_EQ(p.V_em, d.V_em);
  EXPECT_EQ(p.thermal_tau, d.thermal_tau);
  const auto n = NominalActuatorMap::from_config(cfg);
  EXPECT_EQ(n.egr_base, NominalActuatorMap{}.egr_base);
  EXPECT_EQ(n.egr_per_load, NominalActuatorMap{}.egr_per_load);
  const auto lat = Lattice::from_config(cfg);
  EXPECT_EQ(lat.size(), 20u);
}

TEST(Csv, RoundTripIsExact) {
  CsvTable t;
  t.header = {"a", "b"};
  t.rows = {{0.1, 1.0 / 3.0}, {-2.5e-17, 123456789.123}};
  const auto path = std::filesystem::temp_directory_path() / "airpath_csv.csv";
  write_csv(path, t);
  const auto back = read_csv(path);
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(back.column_values("b")[0], 1.0 / 3.0);
  EXPECT_THROW(back.column("c"), InputError);
  std::filesystem::remove(path);
}

TEST(Plot, RendersPanelsAndRejectsRaggedSeries) {
  PlotPanel p{"boost", "bar", {{"run", {0, 1, 2}, {1.0, 1.5, 1.2}}, {"ref", {0, 1, 2}, {1, 1, 1}, true}}};
  const auto svg = render_svg({p}, "time");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  EXPECT_NE(svg.find("stroke-dasharray"), std::string::npos);
  p.series[0].y.pop_back();
  EXPECT_THROW(render_svg({p}, "time"), InputError);
  EXPECT_THROW(render_svg({}, "time"), InputError);
}
