#include "pamod/grid.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "pamod/error.hpp"

namespace pamod {

using lp::kInf;
using lp::Sense;

double series_at(const Series& s, int t, double fallback) {
  if (s.empty()) return fallback;
  if (s.size() == 1) return s[0];
  return s.at(static_cast<std::size_t>(t - 1));
}

int GridModel::reference() const {
  if (reference_bus >= 0) return reference_bus;
  if (buses.empty()) throw ValidationError("grid has no buses");
  return *std::min_element(buses.begin(), buses.end());
}

double GridModel::demand(int bus, int t) const {
  double d = 0.0;
  for (const auto& l : loads)
    if (l.bus == bus) d += series_at(l.demand, t, 0.0);
  return d;
}

double GridModel::cap(int bus, int t) const {
  double c = kInf;
  bool any = false;
  for (const auto& l : loads)
    if (l.bus == bus && !l.cap.empty()) {
      c = any ? c + series_at(l.cap, t, kInf) : series_at(l.cap, t, kInf);
      any = true;
    }
  return c;
}

void validate_grid(const GridModel& g, int T) {
  if (g.buses.empty()) throw ValidationError("grid has no buses");
  std::map<int, int> pos;
  for (int b : g.buses)
    if (!pos.emplace(b, static_cast<int>(pos.size())).second) throw ValidationError("duplicate bus " + std::to_string(b));
  if (!pos.count(g.reference())) throw ValidationError("reference bus is not a grid bus");
  if (!(g.step_seconds > 0)) throw ValidationError("step_seconds must be positive");
  auto check_series = [&](const Series& s, const std::string& what, bool allow_empty) {
    if (s.empty() && !allow_empty) throw ValidationError(what + " is empty");
    if (s.size() > 1 && static_cast<int>(s.size()) < T) throw ValidationError(what + " shorter than the horizon");
    for (double v : s)
      if (!std::isfinite(v)) throw ValidationError(what + " has a non-finite entry");
  };
  std::vector<std::vector<int>> adj(pos.size());
  for (std::size_t i = 0; i < g.lines.size(); ++i) {
    const auto& l = g.lines[i];
    const std::string name = "line " + std::to_string(i);
    if (!pos.count(l.from) || !pos.count(l.to)) throw ValidationError(name + " has an unknown bus");
    if (l.from == l.to) throw ValidationError(name + " is a self-loop");
    if (!(l.reactance > 0)) throw ValidationError(name + " needs positive reactance");
    if (!(l.limit >= 0) || !std::isfinite(l.limit)) throw ValidationError(name + " needs a finite nonnegative limit");
    adj[pos[l.from]].push_back(pos[l.to]);
    adj[pos[l.to]].push_back(pos[l.from]);
  }
  std::vector<char> seen(pos.size(), 0);
  std::deque<int> q{0};
  seen[0] = 1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop_front();
    for (int w : adj[u])
      if (!seen[w]) { seen[w] = 1; q.push_back(w); }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw ValidationError("grid is disconnected");
  for (std::size_t i = 0; i < g.generators.size(); ++i) {
    const auto& gen = g.generators[i];
    const std::string name = "generator " + (gen.name.empty() ? std::to_string(i) : gen.name);
    if (!pos.count(gen.bus)) throw ValidationError(name + " sits on an unknown bus");
    check_series(gen.pmin, name + " pmin", false);
    check_series(gen.pmax, name + " pmax", false);
    check_series(gen.cost, name + " cost", false);
    check_series(gen.ramp_up, name + " ramp_up", true);
    check_series(gen.ramp_down, name + " ramp_down", true);
    for (int t = 1; t <= T; ++t) {
      if (series_at(gen.pmin, t, 0) > series_at(gen.pmax, t, 0)) throw ValidationError(name + " has pmin > pmax");
      if (series_at(gen.ramp_up, t, 0) < 0 || series_at(gen.ramp_down, t, 0) < 0)
        throw ValidationError(name + " has a negative ramp limit");
    }
  }
  for (std::size_t i = 0; i < g.loads.size(); ++i) {
    const auto& l = g.loads[i];
    const std::string name = "load " + std::to_string(i);
    if (!pos.count(l.bus)) throw ValidationError(name + " sits on an unknown bus");
    check_series(l.demand, name + " demand", false);
    check_series(l.cap, name + " cap", true);
  }
}

namespace {

std::string idx2(int a, int b) { return "[" + std::to_string(a) + "," + std::to_string(b) + "]"; }

}  // namespace

GridLayout add_grid_block(lp::LpProblem& lp, const GridModel& grid, const BusSeries& extra, int T,
                          const DispatchOptions& opt) {
  validate_grid(grid, T);
  const double h = grid.step_hours();
  GridLayout L;
  L.T = T;
  L.buses = grid.buses;
  std::sort(L.buses.begin(), L.buses.end());
  for (std::size_t i = 0; i < L.buses.size(); ++i) L.bus_pos[L.buses[i]] = static_cast<int>(i);
  const int nb = static_cast<int>(L.buses.size());
  const int ref = grid.reference();
  for (const auto& [key, mw] : extra)
    if (!L.bus_pos.count(key.first) || key.second < 1 || key.second > T)
      throw ValidationError("extra load outside the grid or horizon");

  L.p.assign(grid.generators.size(), std::vector<int>(T));
  for (std::size_t g = 0; g < grid.generators.size(); ++g) {
    const auto& gen = grid.generators[g];
    for (int t = 1; t <= T; ++t)
      L.p[g][t - 1] = lp.add_variable("p" + idx2(static_cast<int>(g), t), series_at(gen.pmin, t, 0),
                                      series_at(gen.pmax, t, 0), series_at(gen.cost, t, 0) * h);
  }
  L.theta.assign(nb, std::vector<int>(T));
  for (int b = 0; b < nb; ++b)
    for (int t = 1; t <= T; ++t) {
      const bool is_ref = L.buses[b] == ref;
      L.theta[b][t - 1] = lp.add_variable("th" + idx2(L.buses[b], t), is_ref ? 0.0 : -kInf, is_ref ? 0.0 : kInf, 0.0);
    }
  L.flow.assign(grid.lines.size(), std::vector<int>(T));
  for (std::size_t e = 0; e < grid.lines.size(); ++e)
    for (int t = 1; t <= T; ++t)
      L.flow[e][t - 1] = lp.add_variable("F" + idx2(static_cast<int>(e), t), -grid.lines[e].limit,
                                         grid.lines[e].limit, 0.0);
  L.delivered.assign(nb, std::vector<int>(T));
  L.shed.assign(nb, std::vector<int>(T, -1));
  for (int b = 0; b < nb; ++b)
    for (int t = 1; t <= T; ++t) {
      L.delivered[b][t - 1] = lp.add_variable("dl" + idx2(L.buses[b], t), -kInf, kInf, 0.0);
      if (opt.shed_penalty && !opt.relaxed.count({L.buses[b], t}))
        L.shed[b][t - 1] = lp.add_variable("shed" + idx2(L.buses[b], t), 0.0, kInf, *opt.shed_penalty * h);
    }

  L.balance.assign(nb, std::vector<int>(T));
  L.loaddef.assign(nb, std::vector<int>(T, -1));
  L.cap.assign(nb, std::vector<int>(T, -1));
  for (int b = 0; b < nb; ++b)
    for (int t = 1; t <= T; ++t) {
      const int bus = L.buses[b];
      const int r = lp.add_row("bal" + idx2(bus, t), Sense::Equal, 0.0);
      L.balance[b][t - 1] = r;
      for (std::size_t g = 0; g < grid.generators.size(); ++g)
        if (grid.generators[g].bus == bus) lp.add_coefficient(r, L.p[g][t - 1], 1.0);
      for (std::size_t e = 0; e < grid.lines.size(); ++e) {
        if (grid.lines[e].from == bus) lp.add_coefficient(r, L.flow[e][t - 1], -1.0);
        if (grid.lines[e].to == bus) lp.add_coefficient(r, L.flow[e][t - 1], 1.0);
      }
      lp.add_coefficient(r, L.delivered[b][t - 1], -1.0);
      if (opt.relaxed.count({bus, t})) continue;

      double rhs = grid.demand(bus, t);
      auto it = extra.find({bus, t});
      if (it != extra.end()) rhs += it->second;
      const int d = lp.add_row("def" + idx2(bus, t), Sense::Equal, rhs);
      L.loaddef[b][t - 1] = d;
      lp.add_coefficient(d, L.delivered[b][t - 1], 1.0);
      if (L.shed[b][t - 1] >= 0) lp.add_coefficient(d, L.shed[b][t - 1], 1.0);

      const double cap = grid.cap(bus, t);
      if (std::isfinite(cap)) {
        const int c = lp.add_row("cap" + idx2(bus, t), Sense::LessEqual, cap);
        L.cap[b][t - 1] = c;
        lp.add_coefficient(c, L.delivered[b][t - 1], 1.0);
      }
    }
  for (std::size_t e = 0; e < grid.lines.size(); ++e)
    for (int t = 1; t <= T; ++t) {
      const auto& line = grid.lines[e];
      const int r = lp.add_row("dc" + idx2(static_cast<int>(e), t), Sense::Equal, 0.0);
      lp.add_coefficient(r, L.flow[e][t - 1], 1.0);
      lp.add_coefficient(r, L.theta[L.bus_pos[line.from]][t - 1], -1.0 / line.reactance);
      lp.add_coefficient(r, L.theta[L.bus_pos[line.to]][t - 1], 1.0 / line.reactance);
    }
  if (opt.enforce_ramps) {
    for (std::size_t g = 0; g < grid.generators.size(); ++g) {
      const auto& gen = grid.generators[g];
      for (int t = 1; t <= T; ++t) {
        const double up = series_at(gen.ramp_up, t, kInf);
        const double down = series_at(gen.ramp_down, t, kInf);
        if (t == 1 && !gen.initial_output) continue;
        const double prev_const = t == 1 ? *gen.initial_output : 0.0;
        if (std::isfinite(up)) {
          const int r = lp.add_row("rup" + idx2(static_cast<int>(g), t), Sense::LessEqual, up + prev_const);
          lp.add_coefficient(r, L.p[g][t - 1], 1.0);
          if (t > 1) lp.add_coefficient(r, L.p[g][t - 2], -1.0);
        }
        if (std::isfinite(down)) {
          const int r = lp.add_row("rdn" + idx2(static_cast<int>(g), t), Sense::GreaterEqual, -down + prev_const);
          lp.add_coefficient(r, L.p[g][t - 1], 1.0);
          if (t > 1) lp.add_coefficient(r, L.p[g][t - 2], -1.0);
        }
      }
    }
  }
  return L;
}

DispatchAssembly assemble_dispatch(const GridModel& grid, const BusSeries& extra, int T,
                                   const DispatchOptions& options) {
  DispatchAssembly a;
  a.layout = add_grid_block(a.problem, grid, extra, T, options);
  return a;
}

std::pair<IsoSolution, PriceTable> extract_lmp(const lp::LpSolution& s, const GridLayout& L,
                                               const GridModel& grid, double level_energy,
                                               const std::map<int, int>& station_of_bus) {
  if (!s.optimal()) throw lp::SolveError(s.status, "dispatch LP not optimal: " + s.message);
  if (s.duals.empty() && !L.balance.empty()) throw ValidationError("dispatch solution carries no duals");
  const double h = grid.step_hours();
  const int T = L.T;
  IsoSolution iso;
  for (const auto& g : L.p) {
    iso.p.emplace_back();
    for (int c : g) iso.p.back().push_back(s.x.at(c));
  }
  for (const auto& b : L.theta) {
    iso.theta.emplace_back();
    for (int c : b) iso.theta.back().push_back(s.x.at(c));
  }
  for (const auto& e : L.flow) {
    iso.flow.emplace_back();
    for (int c : e) iso.flow.back().push_back(s.x.at(c));
  }
  for (std::size_t g = 0; g < L.p.size(); ++g)
    for (int t = 1; t <= T; ++t)
      iso.generation_cost += series_at(grid.generators[g].cost, t, 0) * iso.p[g][t - 1] * h;
  for (std::size_t b = 0; b < L.buses.size(); ++b)
    for (int t = 1; t <= T; ++t) {
      const int bus = L.buses[b];
      iso.delivered[{bus, t}] = s.x.at(L.delivered[b][t - 1]);
      const double shed = L.shed[b][t - 1] >= 0 ? s.x.at(L.shed[b][t - 1]) : 0.0;
      iso.shed[{bus, t}] = shed;
      iso.shed_energy += shed * h;
      double dual = s.duals.at(L.balance[b][t - 1]);
      if (L.cap[b][t - 1] >= 0) dual -= s.duals.at(L.cap[b][t - 1]);
      iso.lmp[{bus, t}] = dual / h;
    }
  PriceTable prices;
  for (const auto& [bus, station] : station_of_bus) {
    if (!L.bus_pos.count(bus)) throw ValidationError("station mapped to unknown bus " + std::to_string(bus));
    for (int t = 1; t <= T; ++t) prices.set(station, t, iso.lmp.at({bus, t}) * level_energy / 3.6e9);
  }
  return {iso, prices};
}

IsoSolution solve_dispatch(const GridModel& grid, const BusSeries& extra, int T, const DispatchOptions& options) {
  const auto a = assemble_dispatch(grid, extra, T, options);
  const auto s = lp::solve(a.problem);
  return extract_lmp(s, a.layout, grid, 3.6e9, {}).first;
}

double perturbation_lmp_check(const GridModel& grid, const BusSeries& extra, int bus, int t, double eps, int T,
                              const DispatchOptions& options) {
  if (!(eps != 0.0)) throw ValidationError("perturbation must be nonzero");
  const auto base = solve_dispatch(grid, extra, T, options);
  BusSeries bumped = extra;
  bumped[{bus, t}] += eps;
  const auto moved = solve_dispatch(grid, bumped, T, options);
  const double penalty = options.shed_penalty.value_or(0.0) * grid.step_hours();
  double shed_delta = 0.0;
  for (const auto& [key, v] : moved.shed) shed_delta += v;
  for (const auto& [key, v] : base.shed) shed_delta -= v;
  return (moved.generation_cost - base.generation_cost + penalty * shed_delta) / (eps * grid.step_hours());
}

double power_balance_residual(const IsoSolution& iso, const GridModel& grid, int T) {
  double worst = 0.0;
  for (int t = 1; t <= T; ++t)
    for (int bus : grid.buses) {
      double r = -iso.delivered.at({bus, t});
      for (std::size_t g = 0; g < grid.generators.size(); ++g)
        if (grid.generators[g].bus == bus) r += iso.p[g][t - 1];
      for (std::size_t e = 0; e < grid.lines.size(); ++e) {
        if (grid.lines[e].from == bus) r -= iso.flow[e][t - 1];
        if (grid.lines[e].to == bus) r += iso.flow[e][t - 1];
      }
      worst = std::max(worst, std::abs(r));
    }
  return worst;
}

}  // namespace pamod
