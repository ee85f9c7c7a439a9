#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "pamod/error.hpp"
#include "pamod/sim.hpp"

using namespace pamod;

namespace {

Scenario micro() { return generate_instance("micro", {}, 1); }

Scenario tight(std::uint64_t seed, int vehicles = 40, double margin = 0.5) {
  GeneratorParams gp;
  gp.T = 8;
  gp.vehicles = vehicles;
  gp.grid_margin = margin;
  auto s = generate_instance("tight-feeder", gp, seed);
  s.sim.end_charge_threshold = 4;
  return s;
}

ExpandedGraph window(const Scenario& s) { return build_expanded_graph(s.road, s.stations, s.sim.horizon, s.C, {true}); }

RhForecast coordinated(const Scenario& s) { return {s.grid, std::nullopt}; }

std::vector<VehicleAgent> agents_from(const std::map<NodeCharge, double>& idle) {
  std::vector<VehicleAgent> out;
  int id = 0;
  for (const auto& [nc, n] : idle)
    for (int k = 0; k < static_cast<int>(n); ++k) out.push_back({id++, nc.first, nc.second});
  return out;
}

double moving_flow(const lp::LpSolution& sol, const RhAssembly& a, const ExpandedGraph& g) {
  double total = 0.0;
  for (std::size_t e = 0; e < g.edges().size(); ++e)
    if (g.edges()[e].kind != EdgeKind::Wait) total += sol.x[a.layout.f0[e]];
  return total;
}

}  // namespace

TEST(Routes, TimeAndChargeMatchLinkSums) {
  GeneratorParams gp;
  gp.road_nodes = 6;
  const auto s = generate_instance("random", gp, 3);
  const auto routes = precompute_routes(s.road);
  ASSERT_FALSE(routes.empty());
  for (const auto& [od, r] : routes) {
    int node = od.first, time = 0, charge = 0;
    for (int li : r.links) {
      const auto& l = s.road.edges.at(li);
      EXPECT_EQ(l.tail, node);
      node = l.head;
      time += l.traversal_time;
      charge += l.charge_cost;
    }
    EXPECT_EQ(node, od.second);
    EXPECT_EQ(time, r.time);
    EXPECT_EQ(charge, r.charge);
  }
}

TEST(AssembleRh, NoDemandLeavesFleetParked) {
  auto s = micro();
  s.sim.end_charge_threshold = 2;
  const auto g = window(s);
  RhState st;
  st.idle = {{{1, 2}, 3.0}, {{2, 3}, 3.0}};
  const auto a = assemble_rh(g, precompute_routes(s.road), st, coordinated(s), s.fleet, s.coupling, s.sim);
  const auto sol = lp::solve(a.problem);
  ASSERT_TRUE(sol.optimal());
  EXPECT_NEAR(moving_flow(sol, a, g), 0.0, 1e-9);
  DispatchOptions o;
  o.shed_penalty = s.sim.shed_penalty;
  const auto base = solve_dispatch(s.grid, {}, s.sim.horizon, o);
  EXPECT_NEAR(sol.objective, base.generation_cost, 1e-6);
}

TEST(AssembleRh, EmptyFleetDropsEveryRequest) {
  const auto s = micro();
  const auto g = window(s);
  RhState st;
  st.requests = {{1, 2, 1, 1.5}, {2, 1, 2, 2.5}};
  st.outstanding = {{1, 2, 2.0, 3}};
  const auto a = assemble_rh(g, precompute_routes(s.road), st, coordinated(s), s.fleet, s.coupling, s.sim);
  const auto sol = lp::solve(a.problem);
  ASSERT_TRUE(sol.optimal());
  EXPECT_DOUBLE_EQ(sol.x[a.layout.drop[0]], 1.5);
  EXPECT_DOUBLE_EQ(sol.x[a.layout.drop[1]], 2.5);
  EXPECT_DOUBLE_EQ(sol.x[a.layout.outstanding_drop[0]], 2.0);
  DispatchOptions o;
  o.shed_penalty = s.sim.shed_penalty;
  const auto base = solve_dispatch(s.grid, {}, s.sim.horizon, o);
  EXPECT_NEAR(sol.objective, base.generation_cost + 6.0 * s.sim.drop_penalty, 1e-6);
}

TEST(AssembleRh, MissingRouteIsAnError) {
  auto s = micro();
  s.road.edges.pop_back();  // 2 -> 1 gone
  const auto g = window(s);
  RhState st;
  st.requests = {{2, 1, 1, 1.0}};
  EXPECT_THROW(assemble_rh(g, precompute_routes(s.road), st, coordinated(s), s.fleet, s.coupling, s.sim),
               ValidationError);
}

TEST(AssembleRh, ThresholdOutsideRangeIsAnError) {
  auto s = micro();
  s.sim.end_charge_threshold = s.C + 1;
  const auto g = window(s);
  EXPECT_THROW(assemble_rh(g, precompute_routes(s.road), {}, coordinated(s), s.fleet, s.coupling, s.sim),
               ValidationError);
}

TEST(AssembleRh, VariableCountMatchesDecoupledForm) {
  const auto s = micro();
  const auto g = window(s);
  const auto routes = precompute_routes(s.road);
  RhState st;
  st.idle = s.fleet.initial;
  for (const auto& rq : s.requests)
    if (rq.departure_time <= s.sim.horizon) st.requests.push_back(rq);
  const auto a = assemble_rh(g, routes, st, coordinated(s), s.fleet, s.coupling, s.sim);

  // |E| + (feasible levels + drop) per request + |V_R| C + grid block
  std::size_t expected = g.edges().size() + g.road_nodes().size() * s.C;
  for (const auto& rq : st.requests) {
    const auto& r = routes.at({rq.origin, rq.destination});
    for (int c = 1; c <= s.C; ++c) expected += c - r.charge >= 1 && c - r.charge <= s.C;
    expected += 1;
  }
  lp::LpProblem grid_only;
  DispatchOptions o;
  o.shed_penalty = s.sim.shed_penalty;
  add_grid_block(grid_only, s.grid, {}, s.sim.horizon, o);
  expected += grid_only.num_cols();
  EXPECT_EQ(static_cast<std::size_t>(a.problem.num_cols()), expected);

  const auto full_graph = build_expanded_graph(s.road, s.stations, s.sim.horizon, s.C, {true});
  const auto full = assemble_pamod(full_graph, st.requests, s.fleet, s.grid, s.coupling, s.sim.horizon);
  EXPECT_LT(a.problem.num_cols(), full.problem.num_cols());
}

TEST(AssembleRh, FeasibleOnRandomStates) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    GeneratorParams gp;
    gp.road_nodes = 3 + trial % 3;
    gp.vehicles = trial % 4 == 0 ? 0 : 4 + trial;
    gp.grid_margin = 0.3 + 0.1 * (trial % 5);
    auto s = generate_instance("random", gp, 100 + trial);
    s.sim.end_charge_threshold = 1 + trial % s.C;
    const auto g = window(s);
    const auto routes = precompute_routes(s.road);
    RhState st;
    st.idle = s.fleet.initial;
    std::uniform_int_distribution<std::size_t> pick(0, s.road.nodes.size() - 1);
    for (int k = 0; k < 4; ++k) {
      const int o = s.road.nodes[pick(rng)], d = s.road.nodes[pick(rng)];
      if (o == d || !routes.count({o, d})) continue;
      st.requests.push_back({o, d, 1 + k % s.sim.horizon, 0.5 + k});
      st.outstanding.push_back({o, d, 1.0, 2});
    }
    RhForecast fc{s.grid, std::nullopt};
    if (trial % 2) {
      PriceTable flat;
      for (const auto& st : s.stations)
        for (int t = 1; t <= s.sim.horizon; ++t) flat.set(st.node, t, 30.0);
      fc.prices = flat;
    }
    const auto a = assemble_rh(g, routes, st, fc, s.fleet, s.coupling, s.sim);
    EXPECT_TRUE(lp::solve(a.problem).optimal()) << "trial " << trial;
  }
}

TEST(SampleActions, SingleChargeLevelIsAlwaysPicked) {
  const auto s = micro();
  const auto g = window(s);
  const auto routes = precompute_routes(s.road);
  RhState st;
  st.idle = {{{1, 3}, 4.0}};
  st.requests = {{1, 2, 1, 3.0}};
  const auto a = assemble_rh(g, routes, st, coordinated(s), s.fleet, s.coupling, s.sim);
  const auto sol = lp::solve(a.problem);
  ASSERT_TRUE(sol.optimal());
  const auto agents = agents_from(st.idle);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto r = sample_actions(sol, a, g, routes, agents, st, rng);
    int served = 0;
    for (const auto& as : r.assignments)
      if (as.task == Task::ServeCustomer) {
        ++served;
        EXPECT_FALSE(as.fallback);
        EXPECT_EQ(agents.at(as.vehicle).charge, 3);
      }
    EXPECT_EQ(served, 3);
    EXPECT_EQ(r.fallbacks, 0);
  }
}

TEST(SampleActions, EvenSplitOverTwoEdges) {
  const auto s = micro();
  const auto g = window(s);
  const auto routes = precompute_routes(s.road);
  RhState st;
  st.idle = {{{1, 3}, 1.0}};
  const auto a = assemble_rh(g, routes, st, coordinated(s), s.fleet, s.coupling, s.sim);
  lp::LpSolution sol;
  sol.status = lp::Status::Optimal;
  sol.x.assign(a.problem.num_cols(), 0.0);
  const int n = g.node_id(1, 1, 3);
  int wait = -1, road = -1;
  for (int e : g.out_edges(n)) {
    if (g.edges()[e].kind == EdgeKind::Wait) wait = e;
    if (g.edges()[e].kind == EdgeKind::Road) road = e;
  }
  ASSERT_GE(wait, 0);
  ASSERT_GE(road, 0);
  sol.x[a.layout.f0[wait]] = 0.5;
  sol.x[a.layout.f0[road]] = 0.5;
  std::mt19937_64 rng(2024);
  const auto agents = agents_from(st.idle);
  int moved = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto r = sample_actions(sol, a, g, routes, agents, st, rng);
    ASSERT_EQ(r.assignments.size(), 1u);
    moved += r.assignments[0].task == Task::Rebalance;
  }
  EXPECT_NEAR(moved / 1000.0, 0.5, 0.05);
}

TEST(SampleActions, ShortageFallsBackToNearestSufficientVehicle) {
  const auto s = micro();
  const auto g = window(s);
  const auto routes = precompute_routes(s.road);
  RhState st;
  st.requests = {{1, 2, 1, 1.0}};
  const auto a = assemble_rh(g, routes, st, coordinated(s), s.fleet, s.coupling, s.sim);
  lp::LpSolution sol;
  sol.status = lp::Status::Optimal;
  sol.x.assign(a.problem.num_cols(), 0.0);
  sol.x[a.layout.lambda_in[0][1]] = 1.0;  // plan says a level-2 vehicle at node 1

  // none at level 2: a level-1 vehicle cannot make the trip, level 4 at the
  // origin beats level 2 one link away
  const std::vector<VehicleAgent> agents = {{0, 1, 1}, {1, 2, 2}, {2, 1, 4}};
  std::mt19937_64 rng(1);
  auto r = sample_actions(sol, a, g, routes, agents, st, rng);
  ASSERT_EQ(r.fallbacks, 1);
  const Assignment* serve = nullptr;
  for (const auto& as : r.assignments)
    if (as.task == Task::ServeCustomer) serve = &as;
  ASSERT_NE(serve, nullptr);
  EXPECT_EQ(serve->vehicle, 2);
  EXPECT_TRUE(serve->fallback);

  // only a vehicle at the far node: it drives to the pickup first
  const std::vector<VehicleAgent> far = {{0, 1, 1}, {1, 2, 3}};
  r = sample_actions(sol, a, g, routes, far, st, rng);
  ASSERT_EQ(r.fallbacks, 1);
  for (const auto& as : r.assignments)
    if (as.task == Task::ServeCustomer) {
      EXPECT_EQ(as.vehicle, 1);
      EXPECT_EQ(as.path.size(), 2u);
      EXPECT_EQ(as.charge_use, 2);
    }

  // nobody can make it: the customer waits
  const std::vector<VehicleAgent> none = {{0, 1, 1}, {1, 2, 2}};
  r = sample_actions(sol, a, g, routes, none, st, rng);
  EXPECT_EQ(r.unserved[0], 1);
}

TEST(SampleActions, EmptyDistributionLeavesVehiclesIdle) {
  const auto s = micro();
  const auto g = window(s);
  const auto routes = precompute_routes(s.road);
  RhState st;
  st.idle = {{{1, 2}, 2.0}};
  const auto a = assemble_rh(g, routes, st, coordinated(s), s.fleet, s.coupling, s.sim);
  lp::LpSolution sol;
  sol.status = lp::Status::Optimal;
  sol.x.assign(a.problem.num_cols(), 0.0);
  std::mt19937_64 rng(5);
  EXPECT_TRUE(sample_actions(sol, a, g, routes, agents_from(st.idle), st, rng).assignments.empty());
  sol.status = lp::Status::Infeasible;
  EXPECT_THROW(sample_actions(sol, a, g, routes, agents_from(st.idle), st, rng), lp::SolveError);
}

// Per first-step edge and per request level, the mean sampled count over many
// seeded draws matches the LP flow within three standard errors. The fleet is
// large enough that a drawn level is always available at the origin.
TEST(SampleActions, Unbiased) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto s = tight(seed);
    const auto g = window(s);
    const auto routes = precompute_routes(s.road);
    RhState st;
    for (int v : s.road.nodes)
      for (int c = 1; c <= s.C; ++c) st.idle[{v, c}] = 30.0;
    for (const auto& rq : s.requests)
      if (rq.departure_time <= s.sim.horizon) st.requests.push_back(rq);
    for (auto& rq : st.requests) rq.rate = std::ceil(rq.rate);
    const auto a = assemble_rh(g, routes, st, coordinated(s), s.fleet, s.coupling, s.sim);
    const auto sol = lp::solve(a.problem);
    ASSERT_TRUE(sol.optimal());
    const auto agents = agents_from(st.idle);

    constexpr int kDraws = 2000;
    std::map<int, double> flow;  // expected count per LP column
    for (std::size_t m = 0; m < st.requests.size(); ++m)
      if (st.requests[m].departure_time == 1)
        for (int col : a.layout.lambda_in[m])
          if (col >= 0) flow[col] = sol.x[col];
    for (const auto& [nc, count] : st.idle)
      for (int e : g.out_edges(g.node_id(nc.first, 1, nc.second))) flow[a.layout.f0[e]] = sol.x[a.layout.f0[e]];
    std::map<int, double> sum, sq;
    std::mt19937_64 rng(seed * 7919);
    for (int k = 0; k < kDraws; ++k) {
      const auto r = sample_actions(sol, a, g, routes, agents, st, rng);
      ASSERT_EQ(r.fallbacks, 0);
      std::map<int, double> count;
      for (const auto& as : r.assignments) {
        if (as.task == Task::ServeCustomer)
          count[a.layout.lambda_in[as.request][agents.at(as.vehicle).charge - 1]] += 1;
        else
          count[a.layout.f0[as.edge]] += 1;
      }
      for (const auto& [col, n] : count) {
        sum[col] += n;
        sq[col] += n * n;
      }
    }
    for (const auto& [col, x] : flow) {
      const double mean = sum[col] / kDraws;
      const double var = std::max(0.0, sq[col] / kDraws - mean * mean);
      EXPECT_NEAR(mean, x, 3 * std::sqrt(var / kDraws) + 1e-9) << a.problem.col_tag(col);
    }
  }
}

TEST(Bpr, FreeFlowAndAtCapacity) {
  EXPECT_DOUBLE_EQ(bpr_time(3.0, 0.0, 10.0, 0.15, 4.0), 3.0);
  EXPECT_DOUBLE_EQ(bpr_time(3.0, 10.0, 10.0, 0.15, 4.0), 3.0 * 1.15);
  EXPECT_DOUBLE_EQ(bpr_time(3.0, 50.0, 0.0, 0.15, 4.0), 3.0);
  EXPECT_DOUBLE_EQ(bpr_time(3.0, 50.0, lp::kInf, 0.15, 4.0), 3.0);
}

TEST(Noise, ZeroSigmaRealizesForecast) {
  std::mt19937_64 rng(3);
  for (double rate : {0.0, 1.0, 4.0, 7.0}) EXPECT_EQ(realize_customers(rate, 0.0, rng), rate);
  double sum = 0.0;
  for (int k = 0; k < 4000; ++k) sum += realize_customers(2.25, 0.0, rng);
  EXPECT_NEAR(sum / 4000, 2.25, 3 * std::sqrt(0.25 * 0.75 / 4000));
}

TEST(StepWorld, TasksMoveChargeByTheirEdge) {
  auto s = micro();
  s.requests.clear();
  const auto routes = precompute_routes(s.road);
  World w;
  w.vehicles = {{0, 1, 2}, {1, 1, 2}, {2, 2, 3}, {3, 2, 3}};
  std::vector<Assignment> tasks(3);
  tasks[0].vehicle = 0;
  tasks[0].task = Task::Charge;
  tasks[0].charge_use = -1;
  tasks[1].vehicle = 1;
  tasks[1].task = Task::Rebalance;
  tasks[1].path = {0};
  tasks[1].charge_use = 1;
  tasks[2].vehicle = 2;
  tasks[2].task = Task::Discharge;
  tasks[2].charge_use = 1;
  std::mt19937_64 rng(1);
  const StepContext ctx{&s, &routes, 0.15, 4.0};
  const auto next = step_world(w, tasks, ctx, 0.0, rng);
  ASSERT_EQ(next.vehicles.size(), 4u);
  EXPECT_EQ(next.tick, 2);
  EXPECT_EQ(next.vehicles[0].charge, 3);
  EXPECT_EQ(next.vehicles[1].charge, 1);
  EXPECT_EQ(next.vehicles[1].node, 2);
  EXPECT_EQ(next.vehicles[2].charge, 2);
  EXPECT_EQ(next.vehicles[3].charge, 3);
  for (const auto& v : next.vehicles) EXPECT_EQ(v.task, Task::Idle);
  EXPECT_EQ(next.charge_violations, 0);
  // one vehicle charging at bus 2 and one discharging at bus 1, 1 MW each
  EXPECT_DOUBLE_EQ(next.load.at({2, 1}), 1.0);
  EXPECT_DOUBLE_EQ(next.load.at({1, 1}), -1.0);

  tasks = {tasks[0]};
  tasks[0].vehicle = 3;
  EXPECT_THROW(step_world(next, {tasks[0], tasks[0]}, ctx, 0.0, rng), ValidationError);
}

TEST(StepWorld, CongestionStretchesTravel) {
  auto s = micro();
  s.requests.clear();
  s.road.edges[0].capacity = 2.0;
  const auto routes = precompute_routes(s.road);
  World w;
  std::vector<Assignment> tasks;
  for (int k = 0; k < 4; ++k) {
    w.vehicles.push_back({k, 1, 4});
    Assignment as;
    as.vehicle = k;
    as.task = Task::Rebalance;
    as.path = {0};
    as.charge_use = 1;
    tasks.push_back(as);
  }
  std::mt19937_64 rng(1);
  const auto next = step_world(w, tasks, {&s, &routes, 0.15, 4.0}, 0.0, rng);
  // 1 * (1 + 0.15 * 2^4) = 3.4 steps, 3 on the step clock
  for (const auto& v : next.vehicles) {
    EXPECT_EQ(v.task, Task::Rebalance);
    EXPECT_EQ(v.remaining, 2);
    EXPECT_EQ(v.charge, 4);
  }
}

TEST(Simulation, DeterministicUnderSeed) {
  for (auto mode : {SimMode::Baseline, SimMode::Uncoordinated, SimMode::Coordinated}) {
    const auto s = tight(4);
    const auto a = run_simulation(s, mode);
    const auto b = run_simulation(s, mode);
    EXPECT_EQ(a.to_json(), b.to_json()) << to_string(mode);
    EXPECT_EQ(a.to_csv(), b.to_csv());
  }
  auto s = tight(4);
  const auto a = run_simulation(s, SimMode::Coordinated);
  s.sim.seed = 5;
  EXPECT_NE(a.to_json(), run_simulation(s, SimMode::Coordinated).to_json());
}

TEST(Simulation, FleetAndChargeInvariantsHold) {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    GeneratorParams gp;
    gp.road_nodes = 4;
    gp.vehicles = 12;
    auto s = generate_instance("random", gp, seed);
    for (auto mode : {SimMode::Uncoordinated, SimMode::Coordinated}) {
      const auto r = run_simulation(s, mode);
      EXPECT_EQ(r.charge_violations, 0) << seed;
      EXPECT_EQ(r.ticks, s.T);
      ASSERT_EQ(r.series.size(), static_cast<std::size_t>(s.T));
      EXPECT_EQ(r.vehicles, std::lround(s.fleet.size()));
      for (const auto& rec : r.series) EXPECT_LE(rec.idle, r.vehicles);
      EXPECT_LE(r.served, r.customers);
    }
  }
}

TEST(Simulation, AdequateFleetWithoutNoiseServesEveryone) {
  for (std::uint64_t seed : {1, 2, 3}) {
    GeneratorParams gp;
    gp.T = 8;
    gp.vehicles = 60;
    auto s = generate_instance("tight-feeder", gp, seed);
    s.sim.noise_transport = 0;
    s.sim.noise_power = 0;
    s.sim.end_charge_threshold = 3;
    const auto r = run_simulation(s, SimMode::Coordinated);
    EXPECT_NEAR(r.dropped, 0.0, 1e-9) << seed;
    EXPECT_NEAR(r.shed_mwh, 0.0, 1e-9) << seed;
    EXPECT_EQ(r.served, r.customers);
  }
}

TEST(Simulation, CoordinationAvoidsShedding) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = tight(seed);
    const auto base = run_simulation(s, SimMode::Baseline);
    const auto unc = run_simulation(s, SimMode::Uncoordinated);
    const auto coo = run_simulation(s, SimMode::Coordinated);
    EXPECT_NEAR(base.shed_mwh, 0.0, 1e-9);
    EXPECT_GT(unc.shed_mwh, 0.0) << seed;
    EXPECT_GT(unc.mean_lmp, base.mean_lmp);
    EXPECT_NEAR(coo.shed_mwh, 0.0, 1e-9) << seed;
    EXPECT_LE(std::abs(coo.mean_lmp - base.mean_lmp), 0.01 * base.mean_lmp);
    EXPECT_GT(coo.fleet_energy_mwh, 0.0);
  }
}

TEST(SimReport, Outputs) {
  const auto s = tight(2);
  const auto r = run_simulation(s, SimMode::Coordinated);
  const auto csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "tick,bus,lmp,demand,vehicle_load,shed,waiting,idle");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + s.T * static_cast<long>(s.grid.buses.size()));
  EXPECT_EQ(r.to_svg().rfind("<svg", 0), 0u);
  EXPECT_NE(r.to_json().find("\"mode\": \"coordinated\""), std::string::npos);
  EXPECT_EQ(format_micro(to_micro(12.5)), "12.500000");
  EXPECT_EQ(format_micro(to_micro(-0.000001)), "-0.000001");
  EXPECT_EQ(sim_mode_from_string("uncoordinated"), SimMode::Uncoordinated);
  EXPECT_THROW(sim_mode_from_string("chaos"), ValidationError);
}
