#include "pamod/fleet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pamod/error.hpp"

namespace pamod {

using lp::kInf;
using lp::Sense;

double PriceTable::at(int station_node, int t) const {
  auto it = table_.find({station_node, t});
  if (it == table_.end())
    throw ValidationError("no price for station " + std::to_string(station_node) + " at t=" + std::to_string(t));
  return it->second;
}

PriceTable PriceTable::flat(const std::vector<ChargingStation>& stations, int T, double value) {
  PriceTable p;
  for (const auto& s : stations)
    for (int t = 1; t <= T; ++t) p.set(s.node, t, value);
  return p;
}

BundleIndex merge_requests(const std::vector<TripRequest>& requests) {
  std::map<std::tuple<int, int, int>, double> merged;
  for (const auto& r : requests) {
    if (r.rate < 0.0) throw ValidationError("request with negative rate");
    merged[{r.destination, r.origin, r.departure_time}] += r.rate;
  }
  BundleIndex b;
  for (const auto& [key, rate] : merged) {
    if (rate == 0.0) continue;
    const auto [d, o, t] = key;
    if (b.destinations.empty() || b.destinations.back() != d) {
      b.destinations.push_back(d);
      b.members.emplace_back();
    }
    b.members.back().push_back(static_cast<int>(b.requests.size()));
    b.bundle_of.push_back(static_cast<int>(b.destinations.size()) - 1);
    b.requests.push_back({o, d, t, rate});
  }
  return b;
}

double CostBreakdown::total(const FleetSpec& f) const {
  return f.value_of_time * travel_time + f.distance_cost * distance + energy + battery;
}

double CostBreakdown::operating(const FleetSpec& f) const {
  return f.value_of_time * travel_time + f.distance_cost * distance + battery;
}

double TsoSolution::total_flow(int edge) const {
  double s = f0.at(edge);
  for (const auto& b : fb) s += b.at(edge);
  return s;
}

namespace {

std::string idx(std::initializer_list<int> v) {
  std::string s = "[";
  bool first = true;
  for (int x : v) {
    if (!first) s += ',';
    s += std::to_string(x);
    first = false;
  }
  return s + "]";
}

double edge_energy_price(const ExpandedEdge& e, const ExpandedGraph& g, const PriceTable* prices) {
  if (!prices || (e.kind != EdgeKind::Charge && e.kind != EdgeKind::Discharge)) return 0.0;
  const auto& st = g.stations()[e.source];
  return e.dc * prices->at(st.node, g.nodes()[e.from].t);
}

}  // namespace

FleetLayout add_fleet_block(lp::LpProblem& lp, const ExpandedGraph& g,
                            const std::vector<TripRequest>& requests, const FleetSpec& fleet,
                            const PriceTable* prices, const VrcpOptions& options) {
  if (options.include_energy_cost && !prices) throw ValidationError("energy cost requested without prices");
  const PriceTable* price_src = options.include_energy_cost ? prices : nullptr;
  const int T = g.horizon(), C = g.levels();
  const auto& edges = g.edges();
  const int E = static_cast<int>(edges.size());
  const int V = static_cast<int>(g.nodes().size());

  FleetLayout L;
  L.bundles = merge_requests(requests);
  const auto& B = L.bundles;
  const int D = static_cast<int>(B.destinations.size());
  for (const auto& r : B.requests) {
    if (g.node_id(r.origin, r.departure_time, 1) < 0 || g.node_id(r.destination, 1, 1) < 0)
      throw ValidationError("request outside the expanded graph");
  }

  // Per-edge costs shared by all flows; customers additionally pay for time.
  std::vector<double> base_cost(E);
  for (int e = 0; e < E; ++e) {
    const auto& ed = edges[e];
    base_cost[e] = fleet.distance_cost * ed.length_km + fleet.battery_wear_cost * std::abs(ed.dc) +
                   edge_energy_price(ed, g, price_src);
  }

  L.f0.resize(E);
  for (int e = 0; e < E; ++e) L.f0[e] = lp.add_variable("f0" + idx({e}), 0.0, kInf, base_cost[e]);
  L.fb.assign(D, std::vector<int>(E));
  for (int d = 0; d < D; ++d)
    for (int e = 0; e < E; ++e)
      L.fb[d][e] = lp.add_variable("fb" + idx({B.destinations[d], e}), 0.0, kInf,
                                   base_cost[e] + fleet.value_of_time * edges[e].dt);
  L.lambda_in.assign(B.requests.size(), std::vector<int>(C));
  for (std::size_t m = 0; m < B.requests.size(); ++m)
    for (int c = 1; c <= C; ++c)
      L.lambda_in[m][c - 1] = lp.add_variable("lin" + idx({static_cast<int>(m), c}), 0.0, kInf, 0.0);
  L.lambda_out.assign(D, std::vector<int>(T * C));
  for (int d = 0; d < D; ++d)
    for (int t = 1; t <= T; ++t)
      for (int c = 1; c <= C; ++c)
        L.lambda_out[d][(t - 1) * C + c - 1] =
            lp.add_variable("lout" + idx({B.destinations[d], t, c}), 0.0, kInf, 0.0);
  const auto& fc = fleet.final_constraint;
  for (int v : g.road_nodes())
    for (int c = 1; c <= C; ++c) {
      double lo = 0.0, up = kInf;
      if (fc.mode == FinalConstraint::Mode::Fixed) {
        auto it = fc.fixed.find({v, c});
        lo = up = it == fc.fixed.end() ? 0.0 : it->second;
      } else if (c < fc.threshold) {
        up = 0.0;
      }
      L.final_count[{v, c}] = lp.add_variable("nf" + idx({v, c}), lo, up, 0.0);
    }

  // Bundled customer balance.
  for (int d = 0; d < D; ++d) {
    const int dest = B.destinations[d];
    for (int n = 0; n < V; ++n) {
      const auto& nd = g.nodes()[n];
      const int r = lp.add_row("bund" + idx({dest, nd.road, nd.t, nd.c}), Sense::Equal, 0.0);
      for (int e : g.in_edges(n)) lp.add_coefficient(r, L.fb[d][e], 1.0);
      for (int e : g.out_edges(n)) lp.add_coefficient(r, L.fb[d][e], -1.0);
      for (int m : B.members[d]) {
        const auto& rq = B.requests[m];
        if (rq.origin == nd.road && rq.departure_time == nd.t) lp.add_coefficient(r, L.lambda_in[m][nd.c - 1], 1.0);
      }
      if (nd.road == dest) lp.add_coefficient(r, L.lambda_out[d][(nd.t - 1) * C + nd.c - 1], -1.0);
    }
  }
  // Intensities.
  for (std::size_t m = 0; m < B.requests.size(); ++m) {
    const int r = lp.add_row("req" + idx({static_cast<int>(m)}), Sense::Equal, B.requests[m].rate);
    for (int c = 1; c <= C; ++c) lp.add_coefficient(r, L.lambda_in[m][c - 1], 1.0);
  }
  for (int d = 0; d < D; ++d) {
    double total = 0.0;
    for (int m : B.members[d]) total += B.requests[m].rate;
    const int r = lp.add_row("dest" + idx({B.destinations[d]}), Sense::Equal, total);
    for (int col : L.lambda_out[d]) lp.add_coefficient(r, col, 1.0);
  }
  // Rebalancing continuity with initial and final fleet positions.
  L.rebalance_rows.resize(V);
  for (int n = 0; n < V; ++n) {
    const auto& nd = g.nodes()[n];
    double initial = 0.0;
    if (nd.t == 1) {
      auto it = fleet.initial.find({nd.road, nd.c});
      if (it != fleet.initial.end()) initial = it->second;
    }
    const int r = lp.add_row("reb" + idx({nd.road, nd.t, nd.c}), Sense::Equal, -initial);
    L.rebalance_rows[n] = r;
    for (int e : g.in_edges(n)) lp.add_coefficient(r, L.f0[e], 1.0);
    for (int e : g.out_edges(n)) lp.add_coefficient(r, L.f0[e], -1.0);
    for (int d = 0; d < D; ++d)
      if (B.destinations[d] == nd.road) lp.add_coefficient(r, L.lambda_out[d][(nd.t - 1) * C + nd.c - 1], 1.0);
    for (std::size_t m = 0; m < B.requests.size(); ++m) {
      const auto& rq = B.requests[m];
      if (rq.origin == nd.road && rq.departure_time == nd.t) lp.add_coefficient(r, L.lambda_in[m][nd.c - 1], -1.0);
    }
    if (nd.t == T) lp.add_coefficient(r, L.final_count.at({nd.road, nd.c}), -1.0);
  }
  // Road congestion per link and departure step.
  std::map<std::pair<int, int>, std::vector<int>> link_copies;
  std::map<std::pair<int, int>, std::vector<int>> station_copies;
  for (int e = 0; e < E; ++e) {
    const auto& ed = edges[e];
    const int t = g.nodes()[ed.from].t;
    if (ed.kind == EdgeKind::Road) link_copies[{ed.source, t}].push_back(e);
    if (ed.kind == EdgeKind::Charge || ed.kind == EdgeKind::Discharge) station_copies[{ed.source, t}].push_back(e);
  }
  for (const auto& [key, list] : link_copies) {
    const double cap = g.road_edges()[key.first].capacity;
    if (!std::isfinite(cap)) continue;
    const int r = lp.add_row("cong" + idx({key.first, key.second}), Sense::LessEqual, cap);
    for (int e : list) {
      lp.add_coefficient(r, L.f0[e], 1.0);
      for (int d = 0; d < D; ++d) lp.add_coefficient(r, L.fb[d][e], 1.0);
    }
  }
  for (const auto& [key, list] : station_copies) {
    const auto& st = g.stations()[key.first];
    const int r = lp.add_row("scap" + idx({st.node, key.second}), Sense::LessEqual, st.capacity);
    for (int e : list) {
      lp.add_coefficient(r, L.f0[e], 1.0);
      for (int d = 0; d < D; ++d) lp.add_coefficient(r, L.fb[d][e], 1.0);
    }
  }
  return L;
}

VrcpAssembly assemble_vrcp(const ExpandedGraph& graph, const std::vector<TripRequest>& requests,
                           const FleetSpec& fleet, const PriceTable& prices, const VrcpOptions& options) {
  VrcpAssembly a;
  a.layout = add_fleet_block(a.problem, graph, requests, fleet, &prices, options);
  return a;
}

CostBreakdown cost_breakdown(const TsoSolution& sol, const ExpandedGraph& g, const FleetSpec& fleet,
                             const PriceTable* prices) {
  const auto& edges = g.edges();
  if (sol.f0.size() != edges.size()) throw ValidationError("flow vector does not match the graph");
  for (const auto& b : sol.fb)
    if (b.size() != edges.size()) throw ValidationError("bundle flow vector does not match the graph");
  CostBreakdown cb;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& ed = edges[e];
    double customers = 0.0;
    for (const auto& b : sol.fb) customers += b[e];
    const double all = sol.f0[e] + customers;
    cb.travel_time += ed.dt * customers;
    cb.distance += ed.length_km * all;
    cb.battery += fleet.battery_wear_cost * std::abs(ed.dc) * all;
    cb.energy += edge_energy_price(ed, g, prices) * all;
  }
  return cb;
}

TsoSolution extract_tso_solution(const lp::LpSolution& s, const FleetLayout& L, const ExpandedGraph& g,
                                 const FleetSpec& fleet, const PriceTable* prices) {
  if (!s.optimal()) throw lp::SolveError(s.status, "fleet LP not optimal: " + s.message);
  auto val = [&](int col) { return s.x.at(col); };
  TsoSolution out;
  for (int c : L.f0) out.f0.push_back(val(c));
  for (const auto& b : L.fb) {
    out.fb.emplace_back();
    for (int c : b) out.fb.back().push_back(val(c));
  }
  for (const auto& m : L.lambda_in) {
    out.lambda_in.emplace_back();
    for (int c : m) out.lambda_in.back().push_back(val(c));
  }
  for (const auto& d : L.lambda_out) {
    out.lambda_out.emplace_back();
    for (int c : d) out.lambda_out.back().push_back(val(c));
  }
  for (const auto& [key, col] : L.final_count) out.final_distribution[key] = val(col);

  const double tol = 1e-7;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("fleet solution invariant violated: " + what);
  };
  auto nonneg = [&](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x >= -tol; });
  };
  check(nonneg(out.f0), "negative rebalancing flow");
  for (const auto& b : out.fb) check(nonneg(b), "negative bundled flow");
  const auto& B = L.bundles;
  for (std::size_t m = 0; m < B.requests.size(); ++m) {
    double sum = 0.0;
    for (double x : out.lambda_in[m]) sum += x;
    check(std::abs(sum - B.requests[m].rate) <= tol * (1 + B.requests[m].rate), "departure split total");
  }
  for (std::size_t d = 0; d < B.destinations.size(); ++d) {
    double want = 0.0, got = 0.0;
    for (int m : B.members[d]) want += B.requests[m].rate;
    for (double x : out.lambda_out[d]) got += x;
    check(std::abs(want - got) <= tol * (1 + want), "arrival split total");
  }
  out.costs = cost_breakdown(out, g, fleet, prices);
  return out;
}

double fleet_conservation_residual(const TsoSolution& sol, const FleetLayout& L, const ExpandedGraph& g,
                                   const FleetSpec& fleet) {
  const int C = g.levels(), T = g.horizon();
  const auto& B = L.bundles;
  double worst = 0.0;
  for (std::size_t n = 0; n < g.nodes().size(); ++n) {
    const auto& nd = g.nodes()[n];
    for (std::size_t d = 0; d < B.destinations.size(); ++d) {
      double r = 0.0;
      for (int e : g.in_edges(n)) r += sol.fb[d][e];
      for (int e : g.out_edges(n)) r -= sol.fb[d][e];
      for (int m : B.members[d]) {
        const auto& rq = B.requests[m];
        if (rq.origin == nd.road && rq.departure_time == nd.t) r += sol.lambda_in[m][nd.c - 1];
      }
      if (B.destinations[d] == nd.road) r -= sol.lambda_out[d][(nd.t - 1) * C + nd.c - 1];
      worst = std::max(worst, std::abs(r));
    }
    double r = 0.0;
    for (int e : g.in_edges(n)) r += sol.f0[e];
    for (int e : g.out_edges(n)) r -= sol.f0[e];
    for (std::size_t d = 0; d < B.destinations.size(); ++d)
      if (B.destinations[d] == nd.road) r += sol.lambda_out[d][(nd.t - 1) * C + nd.c - 1];
    for (std::size_t m = 0; m < B.requests.size(); ++m) {
      const auto& rq = B.requests[m];
      if (rq.origin == nd.road && rq.departure_time == nd.t) r -= sol.lambda_in[m][nd.c - 1];
    }
    if (nd.t == 1) {
      auto it = fleet.initial.find({nd.road, nd.c});
      if (it != fleet.initial.end()) r += it->second;
    }
    if (nd.t == T) r -= sol.final_distribution.at({nd.road, nd.c});
    worst = std::max(worst, std::abs(r));
  }
  double final_total = 0.0;
  for (const auto& [key, v] : sol.final_distribution) final_total += v;
  worst = std::max(worst, std::abs(final_total - fleet.size()));
  return worst;
}

}  // namespace pamod
