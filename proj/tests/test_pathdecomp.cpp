#include <gtest/gtest.h>

#include <sstream>

#include "json.hpp"
#include "pamod/error.hpp"
#include "pamod/pathdecomp.hpp"
#include "pamod/scenario.hpp"

using namespace pamod;

namespace {

// Reconstruct edge flows from paths and cycles.
std::vector<double> rebuild(const Decomposition& d, std::size_t E) {
  std::vector<double> f(E, 0.0);
  for (const auto* list : {&d.paths, &d.cycles})
    for (const auto& p : *list)
      for (int e : p.edges) f[e] += p.intensity;
  return f;
}

// Road 1 -> 2 -> 3 plus 1 -> 3, zero charge cost, waiting edges.
ExpandedGraph chain() {
  RoadNetwork r;
  r.nodes = {1, 2, 3};
  r.edges = {{1, 2, 1, 1, 0, 9}, {2, 3, 1, 1, 0, 9}, {1, 3, 1, 2, 0, 9}};
  return build_expanded_graph(r, {}, 3, 1, {true});
}

int edge_between(const ExpandedGraph& g, int a, int b) {
  for (int e : g.out_edges(a))
    if (g.edges()[e].to == b) return e;
  return -1;
}

}  // namespace

TEST(Decompose, SinglePath) {
  const auto g = chain();
  std::vector<double> f(g.edges().size(), 0.0);
  const int a = g.node_id(1, 1, 1), b = g.node_id(2, 2, 1), c = g.node_id(3, 3, 1);
  f[edge_between(g, a, b)] = 1.0;
  f[edge_between(g, b, c)] = 1.0;
  const auto d = decompose_flow(g, f, {{a, 1.0}}, {{c, 1.0}});
  ASSERT_EQ(d.paths.size(), 1u);
  EXPECT_TRUE(d.cycles.empty());
  EXPECT_EQ(d.paths[0].nodes, (std::vector<int>{a, b, c}));
  EXPECT_DOUBLE_EQ(d.paths[0].intensity, 1.0);
}

TEST(Decompose, OverlappingPathsReconstruct) {
  const auto g = chain();
  std::vector<double> f(g.edges().size(), 0.0);
  const int a = g.node_id(1, 1, 1), b = g.node_id(2, 2, 1), c = g.node_id(3, 3, 1);
  const int w = g.node_id(2, 3, 1);
  f[edge_between(g, a, b)] = 2.0;
  f[edge_between(g, b, c)] = 1.0;
  f[edge_between(g, b, w)] = 1.0;
  const auto d = decompose_flow(g, f, {{a, 2.0}}, {{c, 1.0}, {w, 1.0}});
  EXPECT_EQ(d.paths.size(), 2u);
  const auto back = rebuild(d, f.size());
  for (std::size_t e = 0; e < f.size(); ++e) EXPECT_NEAR(back[e], f[e], 1e-12);
}

TEST(Decompose, CyclesAreReportedSeparately) {
  // 0 -> 1 -> 2 -> 3 with a loop 1 -> 4 -> 1 on top
  const std::vector<std::pair<int, int>> arcs{{0, 1}, {1, 2}, {2, 3}, {1, 4}, {4, 1}};
  const std::vector<double> f{1.0, 1.0, 1.0, 0.5, 0.5};
  const auto d = decompose_flow(5, arcs, f, {{0, 1.0}}, {{3, 1.0}});
  ASSERT_EQ(d.paths.size(), 1u);
  ASSERT_EQ(d.cycles.size(), 1u);
  EXPECT_DOUBLE_EQ(d.cycles[0].intensity, 0.5);
  EXPECT_EQ(d.cycles[0].nodes.front(), d.cycles[0].nodes.back());
  EXPECT_EQ(d.paths[0].nodes, (std::vector<int>{0, 1, 2, 3}));
  const auto back = rebuild(d, f.size());
  for (std::size_t e = 0; e < f.size(); ++e) EXPECT_NEAR(back[e], f[e], 1e-12);
}

TEST(Decompose, PureCirculation) {
  const std::vector<std::pair<int, int>> arcs{{0, 1}, {1, 2}, {2, 0}};
  const auto d = decompose_flow(3, arcs, {0.3, 0.3, 0.3}, {}, {});
  EXPECT_TRUE(d.paths.empty());
  ASSERT_EQ(d.cycles.size(), 1u);
  EXPECT_DOUBLE_EQ(d.cycles[0].intensity, 0.3);
}

TEST(Decompose, ConservationViolationNamesNode) {
  const auto g = chain();
  std::vector<double> f(g.edges().size(), 0.0);
  const int a = g.node_id(1, 1, 1), b = g.node_id(2, 2, 1);
  f[edge_between(g, a, b)] = 1.0;
  try {
    decompose_flow(g, f, {{a, 1.0}}, {});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("(2,2,1)"), std::string::npos);
  }
}

TEST(Decompose, CrumbsAreIgnored) {
  const auto g = chain();
  std::vector<double> f(g.edges().size(), 0.0);
  const int a = g.node_id(1, 1, 1), c = g.node_id(3, 3, 1);
  f[edge_between(g, a, c)] = 1.0;
  f[edge_between(g, g.node_id(2, 1, 1), g.node_id(2, 2, 1))] = 1e-12;
  f[edge_between(g, g.node_id(2, 2, 1), g.node_id(2, 3, 1))] = 1e-12;
  const auto d = decompose_flow(g, f, {{a, 1.0}, {g.node_id(2, 1, 1), 1e-12}}, {{c, 1.0}, {g.node_id(2, 3, 1), 1e-12}});
  EXPECT_EQ(d.paths.size(), 1u);
}

TEST(Assign, SplitsByOrigin) {
  const auto g = chain();
  const auto B = merge_requests({{1, 3, 1, 0.7}, {2, 3, 2, 0.4}});
  std::vector<double> f(g.edges().size(), 0.0);
  const int a = g.node_id(1, 1, 1), b = g.node_id(2, 2, 1), c = g.node_id(3, 3, 1);
  f[edge_between(g, a, c)] = 0.7;
  f[edge_between(g, b, c)] = 0.4;
  const auto d = decompose_flow(g, f, {{a, 0.7}, {b, 0.4}}, {{c, 1.1}});
  const auto sets = assign_to_requests(g, d.paths, B, 0);
  ASSERT_EQ(sets.size(), 2u);
  const auto flows = per_request_flows(sets, f.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    EXPECT_NEAR(sets[i].total, sets[i].trip.rate, 1e-12);
    EXPECT_LE(request_flow_residual(g, sets[i], flows[i]), 1e-12);
  }
}

TEST(Assign, OrphanPathIsAnError) {
  const auto g = chain();
  const auto B = merge_requests({{1, 3, 1, 1.0}});
  PathFlow p;
  p.nodes = {g.node_id(2, 2, 1), g.node_id(3, 3, 1)};
  p.edges = {edge_between(g, p.nodes[0], p.nodes[1])};
  p.intensity = 1.0;
  EXPECT_THROW(assign_to_requests(g, {p}, B, 0), ValidationError);
}

class SolvedRoutes : public ::testing::TestWithParam<int> {};

TEST_P(SolvedRoutes, LemmaHoldsOnSolvedInstances) {
  const int seed = GetParam();
  const auto s = generate_instance(seed == 0 ? "micro" : "random", {}, seed);
  const auto g = s.graph();
  const auto a = assemble_pamod(g, s.requests, s.fleet, s.grid, s.coupling, s.T);
  const auto sol = lp::solve(a.problem);
  const auto j = extract_joint(sol, a, g, s.fleet, s.grid, s.coupling);
  const auto rep = decompose_routes(j.tso, a.fleet, g, s.fleet);
  EXPECT_LE(rep.reconstruction_error, 1e-9);
  EXPECT_LE(rep.continuity_residual, 1e-9);
  EXPECT_EQ(rep.requests.size(), a.fleet.bundles.requests.size());
  std::size_t components = rep.rebalancing.paths.size() + rep.rebalancing.cycles.size();
  EXPECT_LE(components, g.edges().size() + g.nodes().size());
  for (const auto& set : rep.requests) EXPECT_NEAR(set.total, set.trip.rate, 1e-9);

  // idempotence: per-request flows decompose into the same paths again
  const auto flows = per_request_flows(rep.requests, g.edges().size());
  for (std::size_t i = 0; i < rep.requests.size(); ++i) {
    std::map<int, double> sup, dem;
    for (const auto& p : rep.requests[i].paths) {
      sup[p.nodes.front()] += p.intensity;
      dem[p.nodes.back()] += p.intensity;
    }
    const auto again = decompose_flow(g, flows[i], sup, dem);
    const auto back = rebuild(again, g.edges().size());
    for (std::size_t e = 0; e < back.size(); ++e) EXPECT_NEAR(back[e], flows[i][e], 1e-9);
  }

  std::istringstream lines(route_sets_jsonl(rep.requests, g));
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto obj = nlohmann::json::parse(line);
    EXPECT_TRUE(obj.contains("paths"));
    ++count;
  }
  EXPECT_EQ(count, rep.requests.size());
}

INSTANTIATE_TEST_SUITE_P(Seeds, SolvedRoutes, ::testing::Range(0, 6));
