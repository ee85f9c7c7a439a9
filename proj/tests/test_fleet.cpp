#include <gtest/gtest.h>

#include "pamod/fleet.hpp"
#include "pamod/scenario.hpp"
#include "support/unbundled.hpp"

using namespace pamod;

namespace {

struct Line2 {
  RoadNetwork road;
  FleetSpec fleet;
  std::vector<TripRequest> requests;
};

// One link 1->2 (5 km, 1 step, 1 level), one vehicle at node 1 with charge 2.
Line2 line2() {
  Line2 x;
  x.road.nodes = {1, 2};
  x.road.edges = {{1, 2, 5.0, 1, 1, 10.0}};
  x.fleet.initial = {{{1, 2}, 1.0}};
  x.fleet.value_of_time = 20.0;
  x.fleet.distance_cost = 0.5;
  x.fleet.battery_wear_cost = 3.0;
  x.requests = {{1, 2, 1, 1.0}};
  return x;
}

TsoSolution solve_vrcp(const ExpandedGraph& g, const std::vector<TripRequest>& req, const FleetSpec& fleet,
                       const PriceTable& prices, double* objective = nullptr) {
  const auto a = assemble_vrcp(g, req, fleet, prices);
  const auto s = lp::solve(a.problem);
  if (objective) *objective = s.objective;
  return extract_tso_solution(s, a.layout, g, fleet, &prices);
}

}  // namespace

TEST(Vrcp, SingleTripObjective) {
  const auto x = line2();
  const auto g = build_expanded_graph(x.road, {}, 2, 2);
  double obj = 0;
  const auto sol = solve_vrcp(g, x.requests, x.fleet, PriceTable{}, &obj);
  EXPECT_NEAR(obj, 20.0 * 1 + 0.5 * 5.0 + 3.0 * 1, 1e-9);
  ASSERT_EQ(sol.lambda_in.size(), 1u);
  EXPECT_NEAR(sol.lambda_in[0][1], 1.0, 1e-9);
  EXPECT_NEAR(sol.lambda_in[0][0], 0.0, 1e-9);
  for (double f : sol.f0) EXPECT_NEAR(f, 0.0, 1e-9);
  EXPECT_NEAR(sol.final_distribution.at({2, 1}), 1.0, 1e-9);
}

TEST(Vrcp, NoRequestsParkedFleetCostsNothing) {
  auto x = line2();
  x.requests.clear();
  x.fleet.final_constraint.mode = FinalConstraint::Mode::Fixed;
  x.fleet.final_constraint.fixed = x.fleet.initial;
  std::vector<ChargingStation> st{{1, 1, -1, 3}};
  const auto g = build_expanded_graph(x.road, st, 3, 2, {true});
  double obj = -1;
  const auto sol = solve_vrcp(g, {}, x.fleet, PriceTable::flat(st, 3), &obj);
  EXPECT_NEAR(obj, 0.0, 1e-12);
  EXPECT_NEAR(sol.costs.total(x.fleet), 0.0, 1e-12);
}

TEST(Vrcp, InfeasibleSurfacesAsSolveError) {
  auto x = line2();
  x.requests[0].rate = 5.0;  // one vehicle cannot carry five customers
  const auto g = build_expanded_graph(x.road, {}, 2, 2);
  const auto a = assemble_vrcp(g, x.requests, x.fleet, PriceTable{});
  const auto s = lp::solve(a.problem);
  EXPECT_EQ(s.status, lp::Status::Infeasible);
  try {
    extract_tso_solution(s, a.layout, g, x.fleet, nullptr);
    FAIL();
  } catch (const lp::SolveError& e) {
    EXPECT_EQ(e.status(), lp::Status::Infeasible);
  }
}

TEST(Vrcp, MissingPriceIsRejected) {
  auto x = line2();
  std::vector<ChargingStation> st{{1, 1, -1, 3}};
  const auto g = build_expanded_graph(x.road, st, 2, 2);
  EXPECT_THROW(assemble_vrcp(g, x.requests, x.fleet, PriceTable{}), ValidationError);
}

TEST(CostBreakdown, ZeroFlows) {
  auto x = line2();
  const auto g = build_expanded_graph(x.road, {{1, 2, -2, 2}}, 3, 4);
  TsoSolution sol;
  sol.f0.assign(g.edges().size(), 0.0);
  const auto p = PriceTable::flat(g.stations(), 3, 3.0);
  const auto cb = cost_breakdown(sol, g, x.fleet, &p);
  EXPECT_EQ(cb.travel_time, 0.0);
  EXPECT_EQ(cb.distance, 0.0);
  EXPECT_EQ(cb.energy, 0.0);
  EXPECT_EQ(cb.battery, 0.0);
}

TEST(CostBreakdown, ChargeAndDischargeUnitFlow) {
  auto x = line2();
  const auto g = build_expanded_graph(x.road, {{1, 2, -2, 2}}, 3, 4);
  const auto p = PriceTable::flat(g.stations(), 3, 3.0);
  for (EdgeKind kind : {EdgeKind::Charge, EdgeKind::Discharge}) {
    TsoSolution sol;
    sol.f0.assign(g.edges().size(), 0.0);
    for (std::size_t e = 0; e < g.edges().size(); ++e)
      if (g.edges()[e].kind == kind) {
        sol.f0[e] = 1.0;
        break;
      }
    const auto cb = cost_breakdown(sol, g, x.fleet, &p);
    EXPECT_DOUBLE_EQ(cb.energy, kind == EdgeKind::Charge ? 6.0 : -6.0);
    EXPECT_DOUBLE_EQ(cb.battery, 2.0 * x.fleet.battery_wear_cost);
  }
}

TEST(CostBreakdown, DimensionMismatchThrows) {
  auto x = line2();
  const auto g = build_expanded_graph(x.road, {}, 2, 2);
  TsoSolution sol;
  EXPECT_THROW(cost_breakdown(sol, g, x.fleet, nullptr), ValidationError);
}

TEST(MergeRequests, SumsDuplicatesAndDropsZeros) {
  const auto b = merge_requests({{1, 2, 1, 0.5}, {3, 2, 1, 1.0}, {1, 2, 1, 0.25}, {2, 1, 2, 0.0}});
  ASSERT_EQ(b.requests.size(), 2u);
  EXPECT_EQ(b.destinations, std::vector<int>{2});
  EXPECT_DOUBLE_EQ(b.requests[0].rate, 0.75);
  EXPECT_EQ(b.members[0].size(), 2u);
}

class RandomFleet : public ::testing::TestWithParam<int> {};

TEST_P(RandomFleet, RecomputedCostMatchesObjectiveAndConserves) {
  GeneratorParams gp;
  gp.road_nodes = 3 + GetParam() % 3;
  const auto sc = generate_instance("random", gp, 100 + GetParam());
  const auto g = sc.graph();
  PriceTable prices;
  for (const auto& s : sc.stations)
    for (int t = 1; t <= sc.T; ++t) prices.set(s.node, t, 5.0 + (s.node * 7 + t * 3) % 11);
  const auto a = assemble_vrcp(g, sc.requests, sc.fleet, prices);
  const auto s = lp::solve(a.problem);
  ASSERT_TRUE(s.optimal());
  const auto sol = extract_tso_solution(s, a.layout, g, sc.fleet, &prices);
  EXPECT_NEAR(sol.costs.total(sc.fleet), s.objective, 1e-6 * std::max(1.0, std::abs(s.objective)));
  EXPECT_LE(fleet_conservation_residual(sol, a.layout, g, sc.fleet), 1e-8);
  for (std::size_t e = 0; e < g.edges().size(); ++e) EXPECT_GE(sol.total_flow(static_cast<int>(e)), -1e-9);
}

TEST_P(RandomFleet, BundledEqualsUnbundled) {
  GeneratorParams gp;
  gp.road_nodes = 3;
  gp.T = 5;
  gp.C = 3;
  gp.vehicles = 4;
  const auto sc = generate_instance("random", gp, 200 + GetParam());
  const auto g = sc.graph();
  const auto prices = PriceTable::flat(sc.stations, sc.T, 4.0);
  double bundled = 0;
  solve_vrcp(g, sc.requests, sc.fleet, prices, &bundled);
  const double unbundled = oracle::unbundled_vrcp_optimum(g, sc.requests, sc.fleet, prices);
  EXPECT_NEAR(bundled, unbundled, 1e-7 * std::max(1.0, std::abs(unbundled)));
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomFleet, ::testing::Range(0, 8));
