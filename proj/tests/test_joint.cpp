#include <gtest/gtest.h>

#include <random>

#include "pamod/error.hpp"
#include "pamod/joint.hpp"
#include "pamod/scenario.hpp"

using namespace pamod;

namespace {

Scenario micro() { return generate_instance("micro", {}, 1); }

JointSolution solve(const Scenario& s, const ExpandedGraph& g, JointOptions o = {}) {
  return solve_joint(g, s.requests, s.fleet, s.grid, s.coupling, s.T, o);
}

}  // namespace

TEST(Coupling, UnitConversion) {
  RoadNetwork r;
  r.nodes = {1, 2};
  r.edges = {{1, 2, 1.0, 1, 1, 5.0}};
  const auto g = build_expanded_graph(r, {{1, 2, -2, 3}}, 2, 4);
  CouplingMap map;
  map.station_of_bus = {{5, 1}};
  for (EdgeKind kind : {EdgeKind::Charge, EdgeKind::Discharge}) {
    TsoSolution sol;
    sol.f0.assign(g.edges().size(), 0.0);
    EXPECT_TRUE(coupling_loads(sol, g, map, 1.8e9, 1800).empty());
    for (std::size_t e = 0; e < g.edges().size(); ++e)
      if (g.edges()[e].kind == kind) {
        sol.f0[e] = 1.0;
        break;
      }
    const auto loads = coupling_loads(sol, g, map, 1.8e9, 1800);
    ASSERT_EQ(loads.size(), 1u);
    EXPECT_DOUBLE_EQ(loads.begin()->second, kind == EdgeKind::Charge ? 2.0 : -2.0);
  }
}

TEST(Coupling, UnmappedStationIsAnError) {
  const auto s = micro();
  auto map = s.coupling;
  map.station_of_bus.erase(2);
  const auto g = s.graph();
  EXPECT_THROW(assemble_pamod(g, s.requests, s.fleet, s.grid, map, s.T), ValidationError);
}

TEST(Joint, DecoupledEqualsSumOfParts) {
  auto s = micro();
  s.stations.clear();
  s.coupling.station_of_bus.clear();
  s.fleet.final_constraint.threshold = 1;
  s.fleet.initial = {{{1, 4}, 6.0}, {{2, 4}, 6.0}};
  const auto g = s.graph();
  const auto j = solve(s, g);
  const auto vrcp = assemble_vrcp(g, s.requests, s.fleet, PriceTable{}, {false});
  const auto fleet_opt = lp::solve(vrcp.problem).objective;
  const auto iso = solve_dispatch(s.grid, {}, s.T);
  EXPECT_NEAR(j.objective, fleet_opt + iso.generation_cost, 1e-7 * j.objective);
  EXPECT_TRUE(j.vehicle_load.empty());
  const auto rep = verify_equilibrium(j, g, s.requests, s.fleet, s.grid, s.coupling, 1e-5);
  EXPECT_TRUE(rep.passed);
}

TEST(Joint, TightMicroBeatsUncoordinated) {
  const auto s = generate_instance("micro-tight", {}, 1);
  const auto g = s.graph();
  JointOptions o;
  o.shed_penalty = s.sim.shed_penalty;
  const auto j = solve(s, g, o);
  const auto u = run_uncoordinated(g, s.requests, s.fleet, s.grid, s.coupling, s.T, s.sim.shed_penalty);
  EXPECT_LT(j.objective, u.social_cost - 1.0);
  EXPECT_LT(j.iso.generation_cost, u.redispatch.generation_cost);
}

TEST(Joint, ObjectiveSplitsIntoOperatingAndGeneration) {
  const auto s = micro();
  const auto g = s.graph();
  const auto j = solve(s, g);
  EXPECT_NEAR(j.objective, j.tso.costs.operating(s.fleet) + j.iso.generation_cost, 1e-6 * j.objective);
}

TEST(Joint, ConservationAndCoupling) {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const char* kind : {"micro", "micro-tight", "random", "grid-ladder"}) {
      const auto s = generate_instance(kind, {}, seed);
      const auto g = s.graph();
      const auto a = assemble_pamod(g, s.requests, s.fleet, s.grid, s.coupling, s.T);
      const auto sol = lp::solve(a.problem);
      const auto j = extract_joint(sol, a, g, s.fleet, s.grid, s.coupling);
      double scale = 1.0;
      for (int t = 1; t <= s.T; ++t)
        for (int b : s.grid.buses) scale = std::max(scale, s.grid.demand(b, t));
      EXPECT_LE(coupling_residual(j, s.grid, s.T), 1e-8 * scale) << kind << seed;
      EXPECT_LE(power_balance_residual(j.iso, s.grid, s.T), 1e-8 * scale) << kind << seed;
      EXPECT_LE(fleet_conservation_residual(j.tso, a.fleet, g, s.fleet), 1e-8) << kind << seed;
    }
  }
}

TEST(Equilibrium, MicroPasses) {
  const auto s = micro();
  const auto g = s.graph();
  const auto j = solve(s, g);
  const auto rep = verify_equilibrium(j, g, s.requests, s.fleet, s.grid, s.coupling, 1e-5);
  EXPECT_TRUE(rep.passed);
  EXPECT_LE(std::abs(rep.tso_gap), 1e-5);
  EXPECT_EQ(rep.generators.size(), s.grid.generators.size());
}

TEST(Equilibrium, WrongPricesFailTheFleetCheck) {
  const auto s = micro();
  const auto g = s.graph();
  const auto j = solve(s, g);
  // +10% on the busiest charging slot
  std::pair<int, int> busiest{};
  double most = 0.0;
  for (const auto& [key, mw] : j.vehicle_load)
    if (mw > most) {
      most = mw;
      busiest = key;
    }
  ASSERT_GT(most, 0.0);
  auto wrong = j;
  const int station = s.coupling.station_of_bus.at(busiest.first);
  wrong.prices.set(station, busiest.second, 1.1 * j.prices.at(station, busiest.second));
  const auto rep = verify_equilibrium(wrong, g, s.requests, s.fleet, s.grid, s.coupling, 1e-5);
  EXPECT_FALSE(rep.passed);
  EXPECT_GT(rep.tso_gap, 1e-4);
}

TEST(Equilibrium, RandomInstancesPass) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    GeneratorParams gp;
    gp.road_nodes = 3 + seed % 4;
    gp.buses = 2 + seed % 3;
    const auto s = generate_instance("random", gp, seed);
    const auto g = s.graph();
    const auto j = solve(s, g);
    const auto rep = verify_equilibrium(j, g, s.requests, s.fleet, s.grid, s.coupling, 1e-5);
    EXPECT_TRUE(rep.passed) << "seed " << seed;
  }
}

TEST(Joint, NeverWorseThanFeasiblePairs) {
  const auto s = micro();
  const auto g = s.graph();
  const auto j = solve(s, g);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 60.0);
  for (int trial = 0; trial < 5; ++trial) {
    PriceTable p;
    for (const auto& st : s.stations)
      for (int t = 1; t <= s.T; ++t) p.set(st.node, t, U(rng));
    const auto a = assemble_vrcp(g, s.requests, s.fleet, p);
    const auto tso = extract_tso_solution(lp::solve(a.problem), a.layout, g, s.fleet, &p);
    const auto load = coupling_loads(tso, g, s.coupling, s.fleet.level_energy, s.grid.step_seconds);
    const auto d = assemble_dispatch(s.grid, load, s.T);
    const auto sol = lp::solve(d.problem);
    if (!sol.optimal()) continue;
    const double social = tso.costs.operating(s.fleet) + sol.objective;
    EXPECT_LE(j.objective, social + 1e-6 * social);
  }
}
