#include "pamod/joint.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <set>

#include "pamod/error.hpp"

namespace pamod {

using lp::kInf;
using lp::Sense;

int CouplingMap::bus_of_station(int station_node) const {
  for (const auto& [bus, node] : station_of_bus)
    if (node == station_node) return bus;
  return -1;
}

void CouplingMap::validate(const ExpandedGraph& graph, const GridModel& grid) const {
  std::set<int> nodes;
  for (const auto& [bus, node] : station_of_bus) {
    if (std::find(grid.buses.begin(), grid.buses.end(), bus) == grid.buses.end())
      throw ValidationError("coupling map names unknown bus " + std::to_string(bus));
    if (graph.station_at(node) < 0)
      throw ValidationError("coupling map names node " + std::to_string(node) + " which has no station");
    if (!nodes.insert(node).second)
      throw ValidationError("station " + std::to_string(node) + " is mapped from two buses");
  }
  for (const auto& st : graph.stations())
    if (!nodes.count(st.node)) throw ValidationError("station " + std::to_string(st.node) + " is not mapped to a bus");
}

std::vector<int> CouplingMap::edges_at(const ExpandedGraph& g, int bus, int t, bool charging) const {
  std::vector<int> out;
  auto it = station_of_bus.find(bus);
  if (it == station_of_bus.end()) return out;
  const int s = g.station_at(it->second);
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const auto& ed = g.edges()[e];
    if (ed.source != s) continue;
    const bool want = charging ? ed.kind == EdgeKind::Charge : ed.kind == EdgeKind::Discharge;
    const int t0 = g.nodes()[ed.from].t;
    if (want && t0 <= t && t < t0 + ed.dt) out.push_back(static_cast<int>(e));
  }
  return out;
}

double edge_load_mw(const ExpandedEdge& e, double level_energy, double step_seconds) {
  if (e.kind != EdgeKind::Charge && e.kind != EdgeKind::Discharge) return 0.0;
  return e.dc * level_energy / (e.dt * step_seconds * 1e6);
}

namespace {

// (bus, t, edge, MW per unit flow) for every station edge.
struct LoadTerm {
  int bus, t, edge;
  double mw;
};

std::vector<LoadTerm> load_terms(const ExpandedGraph& g, const CouplingMap& map, double J, double ts) {
  std::vector<LoadTerm> out;
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const auto& ed = g.edges()[e];
    if (ed.kind != EdgeKind::Charge && ed.kind != EdgeKind::Discharge) continue;
    const int bus = map.bus_of_station(g.stations()[ed.source].node);
    if (bus < 0) throw ValidationError("station edge " + std::to_string(e) + " has no bus in the coupling map");
    const int t0 = g.nodes()[ed.from].t;
    for (int t = t0; t < t0 + ed.dt; ++t) out.push_back({bus, t, static_cast<int>(e), edge_load_mw(ed, J, ts)});
  }
  return out;
}

bool basis_degenerate(const lp::LpProblem& p, const lp::LpSolution& s) {
  const int n = p.num_cols();
  std::vector<double> act(p.num_rows(), 0.0);
  for (const auto& e : p.entries()) act[e.row] += e.value * s.x[e.col];
  for (int j : s.basis) {
    if (j < n) {
      const double x = s.x[j];
      const double lo = p.lower(j), up = p.upper(j);
      if ((std::isfinite(lo) && std::abs(x - lo) <= 1e-9 * (1 + std::abs(lo))) ||
          (std::isfinite(up) && std::abs(x - up) <= 1e-9 * (1 + std::abs(up))))
        return true;
    } else {
      const int i = j - n;
      if (p.sense(i) != Sense::Equal && std::abs(p.rhs(i) - act[i]) <= 1e-9 * (1 + std::abs(p.rhs(i))))
        return true;
    }
  }
  return false;
}

}  // namespace

BusSeries coupling_loads(const TsoSolution& tso, const ExpandedGraph& g, const CouplingMap& map, double J,
                         double ts) {
  BusSeries out;
  for (const auto& term : load_terms(g, map, J, ts)) {
    const double f = tso.total_flow(term.edge);
    if (f != 0.0) out[{term.bus, term.t}] += term.mw * f;
  }
  return out;
}

JointAssembly assemble_pamod(const ExpandedGraph& graph, const std::vector<TripRequest>& requests,
                             const FleetSpec& fleet, const GridModel& grid, const CouplingMap& map, int T,
                             const JointOptions& options) {
  if (T != graph.horizon()) throw ValidationError("fleet and grid horizons differ");
  map.validate(graph, grid);
  JointAssembly a;
  VrcpOptions vo;
  vo.include_energy_cost = false;
  a.fleet = add_fleet_block(a.problem, graph, requests, fleet, nullptr, vo);
  DispatchOptions dopt;
  dopt.shed_penalty = options.shed_penalty;
  a.grid = add_grid_block(a.problem, grid, {}, T, dopt);
  for (const auto& term : load_terms(graph, map, fleet.level_energy, grid.step_seconds)) {
    const int row = a.grid.loaddef[a.grid.bus_pos.at(term.bus)][term.t - 1];
    a.problem.add_coefficient(row, a.fleet.f0[term.edge], -term.mw);
    for (const auto& b : a.fleet.fb) a.problem.add_coefficient(row, b[term.edge], -term.mw);
  }
  return a;
}

JointSolution extract_joint(const lp::LpSolution& s, const JointAssembly& a, const ExpandedGraph& graph,
                            const FleetSpec& fleet, const GridModel& grid, const CouplingMap& map) {
  if (!s.optimal()) throw lp::SolveError(s.status, "joint LP not optimal: " + s.message);
  JointSolution j;
  auto [iso, prices] = extract_lmp(s, a.grid, grid, fleet.level_energy, map.station_of_bus);
  j.iso = std::move(iso);
  j.prices = std::move(prices);
  j.tso = extract_tso_solution(s, a.fleet, graph, fleet, &j.prices);
  j.vehicle_load = coupling_loads(j.tso, graph, map, fleet.level_energy, grid.step_seconds);
  j.objective = s.objective;
  j.degenerate = basis_degenerate(a.problem, s);
  j.raw = s;
  return j;
}

JointSolution solve_joint(const ExpandedGraph& graph, const std::vector<TripRequest>& requests,
                          const FleetSpec& fleet, const GridModel& grid, const CouplingMap& map, int T,
                          const JointOptions& options) {
  const auto a = assemble_pamod(graph, requests, fleet, grid, map, T, options);
  const auto s = lp::solve(a.problem);
  return extract_joint(s, a, graph, fleet, grid, map);
}

double coupling_residual(const JointSolution& j, const GridModel& grid, int T) {
  double worst = 0.0;
  for (int t = 1; t <= T; ++t)
    for (int bus : grid.buses) {
      double want = grid.demand(bus, t);
      auto it = j.vehicle_load.find({bus, t});
      if (it != j.vehicle_load.end()) want += it->second;
      const double got = j.iso.delivered.at({bus, t}) + j.iso.shed.at({bus, t});
      worst = std::max(worst, std::abs(got - want));
    }
  return worst;
}

namespace {

GeneratorCheck generator_profit_check(const GridModel& grid, int g, const IsoSolution& iso, int T) {
  const auto& gen = grid.generators[g];
  const double h = grid.step_hours();
  lp::LpProblem p;
  std::vector<int> col(T);
  GeneratorCheck out;
  out.generator = g;
  for (int t = 1; t <= T; ++t) {
    const double margin = (iso.lmp.at({gen.bus, t}) - series_at(gen.cost, t, 0)) * h;
    col[t - 1] = p.add_variable("p" + std::to_string(t), series_at(gen.pmin, t, 0), series_at(gen.pmax, t, 0), -margin);
    out.schedule_profit += margin * iso.p[g][t - 1];
  }
  for (int t = 1; t <= T; ++t) {
    if (t == 1 && !gen.initial_output) continue;
    const double prev = t == 1 ? *gen.initial_output : 0.0;
    const double up = series_at(gen.ramp_up, t, kInf), down = series_at(gen.ramp_down, t, kInf);
    if (std::isfinite(up)) {
      const int r = p.add_row("up" + std::to_string(t), Sense::LessEqual, up + prev);
      p.add_coefficient(r, col[t - 1], 1.0);
      if (t > 1) p.add_coefficient(r, col[t - 2], -1.0);
    }
    if (std::isfinite(down)) {
      const int r = p.add_row("dn" + std::to_string(t), Sense::GreaterEqual, -down + prev);
      p.add_coefficient(r, col[t - 1], 1.0);
      if (t > 1) p.add_coefficient(r, col[t - 2], -1.0);
    }
  }
  const auto s = lp::solve(p);
  if (!s.optimal()) throw lp::SolveError(s.status, "generator profit LP");
  out.best_profit = -s.objective;
  out.gap = (out.best_profit - out.schedule_profit) / std::max(std::abs(out.best_profit), 1.0);
  return out;
}

}  // namespace

EquilibriumReport verify_equilibrium(const JointSolution& joint, const ExpandedGraph& graph,
                                     const std::vector<TripRequest>& requests, const FleetSpec& fleet,
                                     const GridModel& grid, const CouplingMap& map, double tol) {
  EquilibriumReport rep;
  rep.degenerate = joint.degenerate;
  rep.tol = tol;
  if (joint.degenerate && tol < 1e-4) {
    rep.tol = 1e-4;
    rep.warnings.push_back("degenerate joint optimum: prices may be non-unique, tolerance widened to 1e-4");
    spdlog::warn("verify_equilibrium: degenerate joint optimum, tolerance widened to 1e-4");
  }
  map.validate(graph, grid);
  const int T = graph.horizon();

  auto tso_future = std::async(std::launch::async, [&] {
    const auto a = assemble_vrcp(graph, requests, fleet, joint.prices);
    return lp::solve(a.problem);
  });
  std::vector<std::future<GeneratorCheck>> gen_futures;
  for (std::size_t g = 0; g < grid.generators.size(); ++g)
    gen_futures.push_back(std::async(std::launch::async, generator_profit_check, std::cref(grid),
                                     static_cast<int>(g), std::cref(joint.iso), T));

  const auto tso = tso_future.get();
  if (!tso.optimal()) {
    rep.violations.push_back(std::string("TSO: priced fleet problem is ") + lp::to_string(tso.status));
  } else {
    rep.tso_optimum = tso.objective;
    rep.tso_cost = cost_breakdown(joint.tso, graph, fleet, &joint.prices).total(fleet);
    rep.tso_gap = (rep.tso_cost - rep.tso_optimum) / std::max(std::abs(rep.tso_optimum), 1.0);
    if (std::abs(rep.tso_gap) > rep.tol)
      rep.violations.push_back("TSO: relative gap " + std::to_string(rep.tso_gap));
  }
  for (auto& f : gen_futures) {
    rep.generators.push_back(f.get());
    const auto& g = rep.generators.back();
    if (std::abs(g.gap) > rep.tol)
      rep.violations.push_back("generator " + std::to_string(g.generator) + ": relative gap " + std::to_string(g.gap));
  }
  rep.passed = rep.violations.empty();
  return rep;
}

UncoordinatedResult run_uncoordinated(const ExpandedGraph& graph, const std::vector<TripRequest>& requests,
                                      const FleetSpec& fleet, const GridModel& grid, const CouplingMap& map,
                                      int T, double shed_penalty) {
  map.validate(graph, grid);
  UncoordinatedResult r;
  DispatchOptions base_opt;
  base_opt.shed_penalty = shed_penalty;
  {
    const auto a = assemble_dispatch(grid, {}, T, base_opt);
    const auto s = lp::solve(a.problem);
    std::tie(r.baseline, r.prices) = extract_lmp(s, a.layout, grid, fleet.level_energy, map.station_of_bus);
  }
  {
    const auto a = assemble_vrcp(graph, requests, fleet, r.prices);
    const auto s = lp::solve(a.problem);
    r.tso = extract_tso_solution(s, a.layout, graph, fleet, &r.prices);
  }
  r.vehicle_load = coupling_loads(r.tso, graph, map, fleet.level_energy, grid.step_seconds);
  PriceTable after;
  {
    const auto a = assemble_dispatch(grid, r.vehicle_load, T, base_opt);
    const auto s = lp::solve(a.problem);
    std::tie(r.redispatch, after) = extract_lmp(s, a.layout, grid, fleet.level_energy, map.station_of_bus);
  }
  r.social_cost = r.tso.costs.operating(fleet) + r.redispatch.generation_cost + shed_penalty * r.redispatch.shed_energy;
  r.tso_expenditure = cost_breakdown(r.tso, graph, fleet, &after).energy;
  return r;
}

}  // namespace pamod
