#include <gtest/gtest.h>

#include "pamod/error.hpp"
#include "pamod/grid.hpp"
#include "support/random_grid.hpp"

using namespace pamod;

namespace {

GridModel one_bus() {
  GridModel g;
  g.buses = {1};
  Generator gen;
  gen.name = "g";
  gen.bus = 1;
  gen.pmax = {100};
  gen.cost = {10};
  g.generators = {gen};
  g.loads = {{1, {50}, {}}};
  return g;
}

GridModel two_bus(double limit) {
  GridModel g;
  g.buses = {1, 2};
  g.lines = {{1, 2, 0.1, limit}};
  Generator cheap;
  cheap.name = "cheap";
  cheap.bus = 1;
  cheap.pmax = {100};
  cheap.cost = {10};
  Generator dear = cheap;
  dear.name = "dear";
  dear.bus = 2;
  dear.cost = {50};
  g.generators = {cheap, dear};
  g.loads = {{2, {50}, {}}};
  return g;
}

}  // namespace

TEST(Dispatch, OneBusMarginalCost) {
  const auto iso = solve_dispatch(one_bus(), {}, 1);
  EXPECT_NEAR(iso.p[0][0], 50.0, 1e-9);
  EXPECT_NEAR(iso.generation_cost, 500.0, 1e-9);
  EXPECT_NEAR(iso.lmp.at({1, 1}), 10.0, 1e-9);
  EXPECT_NEAR(perturbation_lmp_check(one_bus(), {}, 1, 1, 1.0, 1), 10.0, 1e-9);
}

TEST(Dispatch, TwoBusCongestion) {
  const auto g = two_bus(30);
  const auto iso = solve_dispatch(g, {}, 1);
  EXPECT_NEAR(iso.p[0][0], 30.0, 1e-9);
  EXPECT_NEAR(iso.p[1][0], 20.0, 1e-9);
  EXPECT_NEAR(iso.flow[0][0], 30.0, 1e-9);
  EXPECT_DOUBLE_EQ(iso.lmp.at({1, 1}), 10.0);
  EXPECT_DOUBLE_EQ(iso.lmp.at({2, 1}), 50.0);
  EXPECT_NEAR(perturbation_lmp_check(g, {}, 2, 1, 0.1, 1), 50.0, 1e-9);
  EXPECT_NEAR(perturbation_lmp_check(g, {}, 1, 1, 0.1, 1), 10.0, 1e-9);
}

TEST(Dispatch, UncongestedPricesAreUniform) {
  const auto iso = solve_dispatch(two_bus(100), {}, 1);
  EXPECT_NEAR(iso.lmp.at({1, 1}), 10.0, 1e-9);
  EXPECT_NEAR(iso.lmp.at({2, 1}), 10.0, 1e-9);
}

TEST(Dispatch, NoLoadNoCost) {
  auto g = two_bus(30);
  g.loads.clear();
  const auto iso = solve_dispatch(g, {}, 2);
  EXPECT_EQ(iso.generation_cost, 0.0);
  for (const auto& row : iso.p)
    for (double p : row) EXPECT_EQ(p, 0.0);
}

TEST(Dispatch, BindingDeliveryCapRaisesLmp) {
  auto g = two_bus(100);
  g.loads[0].cap = {40};
  DispatchOptions opt;
  opt.shed_penalty = 1000.0;
  const auto a = assemble_dispatch(g, {}, 1, opt);
  const auto s = lp::solve(a.problem);
  const auto [iso, prices] = extract_lmp(s, a.layout, g, 3.6e9, {});
  const double balance_dual = s.duals[a.layout.balance[1][0]];
  EXPECT_GT(iso.lmp.at({2, 1}), balance_dual + 1.0);
  EXPECT_NEAR(iso.shed.at({2, 1}), 10.0, 1e-9);
  const double eps = 0.1;
  EXPECT_NEAR(perturbation_lmp_check(g, {}, 2, 1, eps, 1, opt), iso.lmp.at({2, 1}),
              0.01 * iso.lmp.at({2, 1}));
  // raising the cap saves exactly the cap multiplier
  auto looser = g;
  looser.loads[0].cap = {40 + eps};
  const double saved = (solve_dispatch(g, {}, 1, opt).generation_cost + 1000.0 * 10.0 -
                        solve_dispatch(looser, {}, 1, opt).generation_cost - 1000.0 * (10.0 - eps)) /
                       eps;
  EXPECT_NEAR(saved, iso.lmp.at({2, 1}) - balance_dual, 1e-6);
}

TEST(Dispatch, PricePerLevelUsesLevelEnergy) {
  const auto g = two_bus(30);
  const auto a = assemble_dispatch(g, {}, 1);
  const auto s = lp::solve(a.problem);
  const auto [iso, prices] = extract_lmp(s, a.layout, g, 1.8e9, {{2, 7}});
  EXPECT_NEAR(prices.at(7, 1), 25.0, 1e-9);
}

TEST(Dispatch, HalfHourStepsKeepPricesPerMwh) {
  auto g = two_bus(30);
  g.step_seconds = 1800;
  const auto iso = solve_dispatch(g, {}, 1);
  EXPECT_NEAR(iso.lmp.at({2, 1}), 50.0, 1e-9);
  EXPECT_NEAR(iso.generation_cost, (30 * 10 + 20 * 50) * 0.5, 1e-9);
}

TEST(Dispatch, RampsBindAcrossSteps) {
  auto g = one_bus();
  g.generators[0].initial_output = 20.0;
  g.generators[0].ramp_up = {10};
  Generator peaker = g.generators[0];
  peaker.name = "peaker";
  peaker.cost = {80};
  peaker.ramp_up.clear();
  peaker.initial_output.reset();
  g.generators.push_back(peaker);
  g.loads[0].demand = {40, 40};
  const auto iso = solve_dispatch(g, {}, 2);
  EXPECT_NEAR(iso.p[0][0], 30.0, 1e-9);
  EXPECT_NEAR(iso.p[0][1], 40.0, 1e-9);
  EXPECT_NEAR(iso.p[1][0], 10.0, 1e-9);
  DispatchOptions loose;
  loose.enforce_ramps = false;
  EXPECT_NEAR(solve_dispatch(g, {}, 2, loose).generation_cost, 800.0, 1e-9);
}

TEST(Dispatch, DisconnectedGridIsRejected) {
  auto g = two_bus(30);
  g.lines.clear();
  EXPECT_THROW(assemble_dispatch(g, {}, 1), ValidationError);
}

TEST(Dispatch, InfeasibleWithoutShed) {
  auto g = two_bus(10);
  g.generators.pop_back();
  EXPECT_THROW(solve_dispatch(g, {}, 1), lp::SolveError);
}

TEST(Dispatch, ReferenceBusInvariance) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto g = oracle::random_grid4(seed, 2);
    g.reference_bus = 1;
    const auto a = solve_dispatch(g, {}, 2);
    g.reference_bus = 3;
    const auto b = solve_dispatch(g, {}, 2);
    EXPECT_NEAR(a.generation_cost, b.generation_cost, 1e-7);
    for (std::size_t e = 0; e < g.lines.size(); ++e)
      for (int t = 0; t < 2; ++t) EXPECT_NEAR(a.flow[e][t], b.flow[e][t], 1e-7);
    for (const auto& [key, v] : a.lmp) EXPECT_NEAR(v, b.lmp.at(key), 1e-7);
    for (int t = 0; t < 2; ++t) {
      const double shift = a.theta[0][t] - b.theta[0][t];
      for (std::size_t k = 1; k < 4; ++k) EXPECT_NEAR(a.theta[k][t] - b.theta[k][t], shift, 1e-7);
    }
    EXPECT_LE(power_balance_residual(a, g, 2), 1e-8 * 60.0);
  }
}

TEST(Dispatch, RandomFourBusLmpMatchesPerturbation) {
  int checked = 0;
  for (std::uint64_t seed = 1; checked < 10 && seed < 200; ++seed) {
    const auto g = oracle::random_grid4(seed);
    const double scale = 60.0, eps = 1e-3 * scale;
    const auto iso = solve_dispatch(g, {}, 1);
    for (int bus = 1; bus <= 4; ++bus) {
      const double up = perturbation_lmp_check(g, {}, bus, 1, eps, 1);
      const double down = perturbation_lmp_check(g, {}, bus, 1, -eps, 1);
      if (std::abs(up - down) > 1e-6 * std::max(1.0, std::abs(up))) continue;
      EXPECT_NEAR(iso.lmp.at({bus, 1}), up, 0.01 * std::max(1.0, std::abs(up))) << "seed " << seed;
      ++checked;
    }
  }
  EXPECT_GE(checked, 10);
}
