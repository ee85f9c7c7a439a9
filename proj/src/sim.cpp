#include "pamod/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include "pamod/error.hpp"

namespace pamod {

using json = nlohmann::json;
using lp::kInf;
using lp::Sense;

RouteTable precompute_routes(const RoadNetwork& road) {
  RouteTable out;
  std::map<int, std::vector<int>> links_from;
  for (std::size_t i = 0; i < road.edges.size(); ++i) links_from[road.edges[i].tail].push_back(static_cast<int>(i));
  for (int src : road.nodes) {
    // (time, charge, node) with the arriving link; ties go to less charge.
    using Item = std::tuple<int, int, int, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    std::map<int, int> via;
    pq.push({0, 0, src, -1});
    std::map<int, std::pair<int, int>> done;
    while (!pq.empty()) {
      const auto [t, c, v, link] = pq.top();
      pq.pop();
      if (done.count(v)) continue;
      done[v] = {t, c};
      via[v] = link;
      for (int li : links_from[v]) {
        const auto& e = road.edges[li];
        if (!done.count(e.head)) pq.push({t + e.traversal_time, c + e.charge_cost, e.head, li});
      }
    }
    for (const auto& [v, tc] : done) {
      if (v == src) continue;
      PrecomputedRoute r{src, v, {}, tc.first, tc.second};
      for (int at = v; at != src;) {
        const int li = via.at(at);
        r.links.push_back(li);
        at = road.edges[li].tail;
      }
      std::reverse(r.links.begin(), r.links.end());
      out[{src, v}] = std::move(r);
    }
  }
  return out;
}

const char* to_string(Task t) {
  switch (t) {
    case Task::Idle: return "idle";
    case Task::ServeCustomer: return "serve";
    case Task::Rebalance: return "rebalance";
    case Task::Charge: return "charge";
    case Task::Discharge: return "discharge";
  }
  return "?";
}

const char* to_string(SimMode m) {
  switch (m) {
    case SimMode::Baseline: return "baseline";
    case SimMode::Uncoordinated: return "uncoordinated";
    case SimMode::Coordinated: return "coordinated";
  }
  return "?";
}

SimMode sim_mode_from_string(const std::string& s) {
  if (s == "baseline") return SimMode::Baseline;
  if (s == "uncoordinated") return SimMode::Uncoordinated;
  if (s == "coordinated") return SimMode::Coordinated;
  throw ValidationError("unknown simulation mode '" + s + "'");
}

Micro to_micro(double value) { return static_cast<Micro>(std::llround(value * 1e6)); }

std::string format_micro(Micro v) {
  const bool neg = v < 0;
  const std::uint64_t a = neg ? 0 - static_cast<std::uint64_t>(v) : static_cast<std::uint64_t>(v);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%llu.%06llu", neg ? "-" : "", static_cast<unsigned long long>(a / 1000000),
                static_cast<unsigned long long>(a % 1000000));
  return buf;
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

const PrecomputedRoute& route_of(const RouteTable& routes, int o, int d) {
  auto it = routes.find({o, d});
  if (it == routes.end())
    throw ValidationError("no precomputed route from " + std::to_string(o) + " to " + std::to_string(d));
  return it->second;
}

bool trip_feasible(int c, const PrecomputedRoute& r, int C) { return c - r.charge >= 1 && c - r.charge <= C; }

}  // namespace

RhAssembly assemble_rh(const ExpandedGraph& g, const RouteTable& routes, const RhState& st, const RhForecast& fc,
                       const FleetSpec& fleet, const CouplingMap& map, const SimConfig& cfg) {
  const int H = g.horizon(), C = g.levels();
  if (cfg.end_charge_threshold < 1 || cfg.end_charge_threshold > C)
    throw ValidationError("end-charge threshold outside 1..C");
  if (cfg.drop_penalty < 0 || cfg.shed_penalty < 0) throw ValidationError("negative penalty");
  const auto& edges = g.edges();
  const int E = static_cast<int>(edges.size());
  RhAssembly a;
  auto& lp = a.problem;
  auto& L = a.layout;
  L.H = H;

  L.f0.resize(E);
  for (int e = 0; e < E; ++e) {
    const auto& ed = edges[e];
    double cost = fleet.distance_cost * ed.length_km + fleet.battery_wear_cost * std::abs(ed.dc);
    if (fc.prices && (ed.kind == EdgeKind::Charge || ed.kind == EdgeKind::Discharge))
      cost += ed.dc * fc.prices->at(g.stations()[ed.source].node, g.nodes()[ed.from].t);
    // Ending the window below the threshold is forbidden for moves and
    // penalized per missing level for vehicles that only wait.
    const auto& to = g.nodes()[ed.to];
    const int short_by = to.t == H ? std::max(0, cfg.end_charge_threshold - to.c) : 0;
    if (ed.kind == EdgeKind::Wait) cost += cfg.drop_penalty * short_by / C;
    L.f0[e] = lp.add_variable("f0" + idx({e}), 0.0, short_by > 0 && ed.kind != EdgeKind::Wait ? 0.0 : kInf, cost);
  }

  // Rebalancing continuity rows first; customer terms are added as we go.
  const int V = static_cast<int>(g.nodes().size());
  std::vector<int> reb(V);
  for (int n = 0; n < V; ++n) {
    const auto& nd = g.nodes()[n];
    double fixed = 0.0;
    if (nd.t == 1) {
      auto it = st.idle.find({nd.road, nd.c});
      if (it != st.idle.end()) fixed += it->second;
    }
    auto it = st.arriving.find({nd.road, nd.t, nd.c});
    if (it != st.arriving.end()) fixed += it->second;
    reb[n] = lp.add_row("reb" + idx({nd.road, nd.t, nd.c}), Sense::Equal, -fixed);
    for (int e : g.in_edges(n)) lp.add_coefficient(reb[n], L.f0[e], 1.0);
    for (int e : g.out_edges(n)) lp.add_coefficient(reb[n], L.f0[e], -1.0);
  }
  for (int v : g.road_nodes())
    for (int c = 1; c <= C; ++c) {
      const int col = lp.add_variable("nf" + idx({v, c}), 0.0, kInf, 0.0);
      L.final_count[{v, c}] = col;
      lp.add_coefficient(reb[g.node_id(v, H, c)], col, -1.0);
    }
  // A customer trip leaves (o, t, c) and lands at (d, t + time, c - charge)
  // unless it ends past the window.
  auto link_trip = [&](int col, int o, int d, int t, int c, const PrecomputedRoute& r) {
    lp.add_coefficient(reb[g.node_id(o, t, c)], col, -1.0);
    const int to = g.node_id(d, t + r.time, c - r.charge);
    if (to >= 0) lp.add_coefficient(reb[to], col, 1.0);
  };

  L.lambda_in.assign(st.requests.size(), std::vector<int>(C, -1));
  for (std::size_t m = 0; m < st.requests.size(); ++m) {
    const auto& rq = st.requests[m];
    if (rq.departure_time < 1 || rq.departure_time > H) throw ValidationError("request departs outside the window");
    const auto& r = route_of(routes, rq.origin, rq.destination);
    const int row = lp.add_row("req" + idx({static_cast<int>(m)}), Sense::Equal, rq.rate);
    for (int c = 1; c <= C; ++c) {
      if (!trip_feasible(c, r, C)) continue;
      const int col = lp.add_variable("lin" + idx({static_cast<int>(m), c}), 0.0, kInf, 0.0);
      L.lambda_in[m][c - 1] = col;
      lp.add_coefficient(row, col, 1.0);
      link_trip(col, rq.origin, rq.destination, rq.departure_time, c, r);
    }
    L.drop.push_back(lp.add_variable("drop" + idx({static_cast<int>(m)}), 0.0, kInf, cfg.drop_penalty));
    lp.add_coefficient(row, L.drop.back(), 1.0);
  }
  L.outstanding_in.assign(st.outstanding.size(), std::vector<int>(H * C, -1));
  for (std::size_t m = 0; m < st.outstanding.size(); ++m) {
    const auto& rq = st.outstanding[m];
    const auto& r = route_of(routes, rq.origin, rq.destination);
    const int row = lp.add_row("out" + idx({static_cast<int>(m)}), Sense::Equal, rq.rate);
    for (int t = 1; t <= H; ++t)
      for (int c = 1; c <= C; ++c) {
        if (!trip_feasible(c, r, C)) continue;
        const int col = lp.add_variable("oin" + idx({static_cast<int>(m), t, c}), 0.0, kInf,
                                        fleet.value_of_time * t);
        L.outstanding_in[m][(t - 1) * C + c - 1] = col;
        lp.add_coefficient(row, col, 1.0);
        link_trip(col, rq.origin, rq.destination, t, c, r);
      }
    L.outstanding_drop.push_back(lp.add_variable("odrop" + idx({static_cast<int>(m)}), 0.0, kInf, cfg.drop_penalty));
    lp.add_coefficient(row, L.outstanding_drop.back(), 1.0);
  }

  // Road capacity left after the scheduled customer trips.
  const auto& links = g.road_edges();
  L.residual_capacity.assign(links.size() * H, 0.0);
  for (std::size_t li = 0; li < links.size(); ++li)
    for (int t = 1; t <= H; ++t) L.residual_capacity[li * H + t - 1] = links[li].capacity;
  for (const auto& rq : st.requests) {
    const auto& r = route_of(routes, rq.origin, rq.destination);
    int t = rq.departure_time;
    for (int li : r.links) {
      if (t <= H) L.residual_capacity[li * H + t - 1] -= rq.rate;
      t += links[li].traversal_time;
    }
  }
  for (auto& x : L.residual_capacity) x = std::max(0.0, x);

  std::map<std::pair<int, int>, std::vector<int>> link_copies, station_copies;
  for (int e = 0; e < E; ++e) {
    const auto& ed = edges[e];
    const int t = g.nodes()[ed.from].t;
    if (ed.kind == EdgeKind::Road) link_copies[{ed.source, t}].push_back(e);
    if (ed.kind == EdgeKind::Charge || ed.kind == EdgeKind::Discharge) station_copies[{ed.source, t}].push_back(e);
  }
  for (const auto& [key, list] : link_copies) {
    const double cap = L.residual_capacity[key.first * H + key.second - 1];
    if (!std::isfinite(cap)) continue;
    const int r = lp.add_row("cong" + idx({key.first, key.second}), Sense::LessEqual, cap);
    for (int e : list) lp.add_coefficient(r, L.f0[e], 1.0);
  }
  for (const auto& [key, list] : station_copies) {
    const auto& s = g.stations()[key.first];
    const int r = lp.add_row("scap" + idx({s.node, key.second}), Sense::LessEqual, s.capacity);
    for (int e : list) lp.add_coefficient(r, L.f0[e], 1.0);
  }

  if (!fc.prices) {
    DispatchOptions dopt;
    dopt.shed_penalty = cfg.shed_penalty;
    L.grid = add_grid_block(lp, fc.grid, {}, H, dopt);
    for (int e = 0; e < E; ++e) {
      const auto& ed = edges[e];
      if (ed.kind != EdgeKind::Charge && ed.kind != EdgeKind::Discharge) continue;
      const int bus = map.bus_of_station(g.stations()[ed.source].node);
      if (bus < 0) throw ValidationError("station without a bus in the coupling map");
      const double mw = edge_load_mw(ed, fleet.level_energy, fc.grid.step_seconds);
      const int t0 = g.nodes()[ed.from].t;
      for (int t = t0; t < t0 + ed.dt && t <= H; ++t)
        lp.add_coefficient(L.grid->loaddef[L.grid->bus_pos.at(bus)][t - 1], L.f0[e], -mw);
    }
  }
  return a;
}

namespace {

// Index drawn with probability proportional to w; -1 when all weights vanish.
int draw(const std::vector<double>& w, std::mt19937_64& rng) {
  double total = 0.0;
  for (double x : w) total += std::max(0.0, x);
  if (total <= 1e-9) return -1;
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0) continue;
    acc += w[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;
}

class IdlePool {
 public:
  IdlePool(const std::vector<VehicleAgent>& agents) {
    for (const auto& a : agents)
      if (a.task == Task::Idle) pool_[{a.node, a.charge}].push_back(a.id);
    for (auto& [k, v] : pool_) std::reverse(v.begin(), v.end());  // pop lowest id first
  }
  int take(int node, int c) {
    auto it = pool_.find({node, c});
    if (it == pool_.end() || it->second.empty()) return -1;
    const int id = it->second.back();
    it->second.pop_back();
    return id;
  }
  std::map<NodeCharge, std::vector<int>>& all() { return pool_; }

 private:
  std::map<NodeCharge, std::vector<int>> pool_;
};

// Nearest idle vehicle able to reach the origin and finish the trip.
int fallback_vehicle(IdlePool& pool, const RouteTable& routes, const PrecomputedRoute& trip, int C, int wanted,
                     std::vector<int>* pickup) {
  int best_id = -1;
  std::tuple<int, int, int> best{std::numeric_limits<int>::max(), 0, 0};
  NodeCharge best_key{};
  for (auto& [key, ids] : pool.all()) {
    if (ids.empty()) continue;
    const auto [node, c] = key;
    int time = 0, use = 0;
    if (node != trip.origin) {
      auto it = routes.find({node, trip.origin});
      if (it == routes.end()) continue;
      time = it->second.time;
      use = it->second.charge;
    }
    const int left = c - use - trip.charge;
    if (left < 1 || left > C || c - use < 1) continue;
    const std::tuple<int, int, int> rank{time, std::abs(c - wanted), ids.back()};
    if (rank < best) {
      best = rank;
      best_id = ids.back();
      best_key = key;
    }
  }
  if (best_id < 0) return -1;
  pool.all()[best_key].pop_back();
  pickup->clear();
  if (best_key.first != trip.origin) *pickup = routes.at({best_key.first, trip.origin}).links;
  return best_id;
}

}  // namespace

SampleResult sample_actions(const lp::LpSolution& s, const RhAssembly& a, const ExpandedGraph& g,
                            const RouteTable& routes, const std::vector<VehicleAgent>& agents, const RhState& st,
                            std::mt19937_64& rng) {
  if (!s.optimal()) throw lp::SolveError(s.status, "receding-horizon LP not optimal: " + s.message);
  const int C = g.levels(), H = g.horizon();
  const auto& L = a.layout;
  const auto& links = g.road_edges();
  IdlePool pool(agents);
  SampleResult out;
  out.unserved.assign(st.requests.size(), 0);
  out.unserved_outstanding.assign(st.outstanding.size(), 0);

  auto serve = [&](int o, int d, int c, int request, bool outstanding) {
    const auto& trip = route_of(routes, o, d);
    Assignment as;
    as.task = Task::ServeCustomer;
    as.request = request;
    as.from_outstanding = outstanding;
    as.origin = o;
    as.destination = d;
    int id = pool.take(o, c);
    std::vector<int> pickup;
    if (id < 0) {
      id = fallback_vehicle(pool, routes, trip, C, c, &pickup);
      if (id < 0) return false;
      as.fallback = true;
      ++out.fallbacks;
    }
    as.vehicle = id;
    as.path = pickup;
    as.path.insert(as.path.end(), trip.links.begin(), trip.links.end());
    for (int li : as.path) as.charge_use += links[li].charge_cost;
    out.assignments.push_back(std::move(as));
    return true;
  };

  for (std::size_t m = 0; m < st.requests.size(); ++m) {
    const auto& rq = st.requests[m];
    if (rq.departure_time != 1) continue;
    const int n = static_cast<int>(std::ceil(rq.rate - 1e-9));
    std::vector<double> w(C, 0.0);
    for (int c = 1; c <= C; ++c)
      if (L.lambda_in[m][c - 1] >= 0) w[c - 1] = s.x[L.lambda_in[m][c - 1]];
    for (int k = 0; k < n; ++k) {
      const int c = draw(w, rng);
      if (c < 0 || !serve(rq.origin, rq.destination, c + 1, static_cast<int>(m), false)) ++out.unserved[m];
    }
  }
  for (std::size_t m = 0; m < st.outstanding.size(); ++m) {
    const auto& rq = st.outstanding[m];
    const int n = static_cast<int>(std::ceil(rq.rate - 1e-9));
    std::vector<double> w(H * C, 0.0);
    for (int k = 0; k < H * C; ++k)
      if (L.outstanding_in[m][k] >= 0) w[k] = s.x[L.outstanding_in[m][k]];
    for (int k = 0; k < n; ++k) {
      const int tc = draw(w, rng);
      // Departures sampled later than now wait for the next solve.
      if (tc < 0 || tc / C != 0 || !serve(rq.origin, rq.destination, tc % C + 1, static_cast<int>(m), true))
        ++out.unserved_outstanding[m];
    }
  }
  for (auto& [key, ids] : pool.all()) {
    const int n = g.node_id(key.first, 1, key.second);
    if (n < 0 || ids.empty()) continue;
    const auto& outs = g.out_edges(n);
    std::vector<double> w;
    for (int e : outs) w.push_back(s.x[L.f0[e]]);
    // Pool order is highest id last; sample in ascending id order.
    for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
      const int k = draw(w, rng);
      if (k < 0) break;
      const int e = outs[k];
      const auto& ed = g.edges()[e];
      Assignment as;
      as.vehicle = *it;
      as.edge = e;
      switch (ed.kind) {
        case EdgeKind::Charge: as.task = Task::Charge; break;
        case EdgeKind::Discharge: as.task = Task::Discharge; break;
        case EdgeKind::Road:
          as.task = Task::Rebalance;
          as.path = {ed.source};
          break;
        case EdgeKind::Wait: as.task = Task::Idle; break;
      }
      as.charge_use = -ed.dc;
      out.assignments.push_back(std::move(as));
    }
  }
  return out;
}

double bpr_time(double free_flow, double flow, double capacity, double a, double b) {
  if (!(capacity > 0) || !std::isfinite(capacity)) return free_flow;
  return free_flow * (1.0 + a * std::pow(std::max(0.0, flow) / capacity, b));
}

int realize_customers(double rate, double sigma, std::mt19937_64& rng) {
  const double z = std::normal_distribution<double>(0.0, 1.0)(rng);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const double r = std::max(0.0, rate * (1.0 + sigma * z));
  const double whole = std::floor(r);
  return static_cast<int>(whole) + (u < r - whole ? 1 : 0);
}

namespace {

void materialize(World& w, const Scenario& sc, double sigma, std::mt19937_64& rng) {
  for (const auto& c : w.new_arrivals) w.waiting.push_back(c);
  w.new_arrivals.clear();
  if (w.tick > sc.T) return;
  for (const auto& rq : sc.requests) {
    if (rq.departure_time != w.tick) continue;
    const int n = realize_customers(rq.rate, sigma, rng);
    for (int k = 0; k < n; ++k) w.new_arrivals.push_back({rq.origin, rq.destination, w.tick});
    w.customers += n;
  }
}

// Removes one waiting customer for (o, d), oldest first, and returns its arrival tick.
int pick_customer(std::vector<Customer>& list, int o, int d) {
  for (std::size_t i = 0; i < list.size(); ++i)
    if (list[i].origin == o && list[i].destination == d) {
      const int t = list[i].arrival_tick;
      list.erase(list.begin() + static_cast<long>(i));
      return t;
    }
  return -1;
}

}  // namespace

World step_world(World w, const std::vector<Assignment>& assignments, const StepContext& ctx, double sigma,
                 std::mt19937_64& rng) {
  const Scenario& sc = *ctx.scenario;
  const auto& links = sc.road.edges;
  std::map<int, std::size_t> pos;
  for (std::size_t i = 0; i < w.vehicles.size(); ++i) pos[w.vehicles[i].id] = i;

  std::vector<double> entering(links.size(), 0.0);
  for (const auto& as : assignments)
    for (int li : as.path) entering.at(li) += 1.0;
  w.load.clear();
  for (const auto& as : assignments) {
    auto& v = w.vehicles.at(pos.at(as.vehicle));
    if (v.task != Task::Idle) throw ValidationError("assignment to a busy vehicle " + std::to_string(v.id));
    if (as.task == Task::Idle) continue;
    v.task = as.task;
    v.charge_delta = -as.charge_use;
    if (as.task == Task::Charge || as.task == Task::Discharge) {
      v.remaining = 1;
      const int s = [&] {
        for (std::size_t k = 0; k < sc.stations.size(); ++k)
          if (sc.stations[k].node == v.node) return static_cast<int>(k);
        return -1;
      }();
      if (s < 0) throw ValidationError("station task away from a station");
      const int bus = sc.coupling.bus_of_station(v.node);
      if (bus >= 0) {
        ExpandedEdge e;
        e.kind = as.task == Task::Charge ? EdgeKind::Charge : EdgeKind::Discharge;
        e.dc = v.charge_delta;
        w.load[{bus, w.tick}] += edge_load_mw(e, sc.fleet.level_energy, sc.grid.step_seconds);
      }
      continue;
    }
    double time = 0.0;
    for (int li : as.path)
      time += bpr_time(links[li].traversal_time, entering[li], links[li].capacity, ctx.bpr_a, ctx.bpr_b);
    v.remaining = std::max(1, static_cast<int>(std::lround(time)));
    if (as.task == Task::Rebalance) {
      v.node = links.at(as.path.back()).head;
    } else {
      v.node = as.destination;
      int arrived = pick_customer(as.from_outstanding ? w.waiting : w.new_arrivals, as.origin, as.destination);
      if (arrived < 0) arrived = pick_customer(as.from_outstanding ? w.new_arrivals : w.waiting, as.origin, as.destination);
      if (arrived < 0) throw ValidationError("assignment for a customer who is not waiting");
      ++w.served;
      w.trip_steps += (w.tick - arrived) + v.remaining;
    }
  }

  const int C = sc.C;
  for (auto& v : w.vehicles) {
    if (v.task == Task::Idle) continue;
    if (--v.remaining > 0) continue;
    v.charge += v.charge_delta;
    if (v.charge < 1 || v.charge > C) {
      ++w.charge_violations;
      v.charge = std::clamp(v.charge, 1, C);
    }
    v.charge_delta = 0;
    v.task = Task::Idle;
  }
  ++w.tick;
  materialize(w, sc, sigma, rng);
  return w;
}

bool operator==(const TickRecord& a, const TickRecord& b) {
  return a.tick == b.tick && a.lmp == b.lmp && a.demand == b.demand && a.vehicle_load == b.vehicle_load &&
         a.shed == b.shed && a.waiting == b.waiting && a.idle == b.idle;
}

namespace {

Series slice(const Series& s, int start, int H, int T) {
  if (s.size() <= 1) return s;
  Series out;
  for (int k = 0; k < H; ++k) out.push_back(s.at(static_cast<std::size_t>(std::min(start + k, T) - 1)));
  return out;
}

GridModel slice_grid(const GridModel& grid, int start, int H, int T) {
  GridModel w = grid;
  for (auto& gen : w.generators) {
    gen.pmin = slice(gen.pmin, start, H, T);
    gen.pmax = slice(gen.pmax, start, H, T);
    gen.cost = slice(gen.cost, start, H, T);
    gen.ramp_up = slice(gen.ramp_up, start, H, T);
    gen.ramp_down = slice(gen.ramp_down, start, H, T);
  }
  for (auto& l : w.loads) {
    l.demand = slice(l.demand, start, H, T);
    l.cap = slice(l.cap, start, H, T);
  }
  return w;
}

// Replaces the first step of every load with its realized value.
void set_first_demand(GridModel& g, const std::vector<double>& realized, int H) {
  for (std::size_t i = 0; i < g.loads.size(); ++i) {
    auto& d = g.loads[i].demand;
    if (d.size() <= 1) d = Series(H, series_at(d, 1, 0.0));
    d[0] = realized[i];
  }
}

RhState make_state(const World& w, int H) {
  RhState st;
  for (const auto& v : w.vehicles) {
    if (v.task == Task::Idle) {
      st.idle[{v.node, v.charge}] += 1.0;
    } else if (1 + v.remaining <= H) {
      st.arriving[{v.node, 1 + v.remaining, v.charge + v.charge_delta}] += 1.0;
    }
  }
  return st;
}

}  // namespace

namespace {

// Drops sampled charging tasks, last drawn first, until no station draws more
// than the plan's first-step load there. Returns the number dropped.
int hold_to_plan(std::vector<Assignment>& tasks, const lp::LpSolution& sol, const RhAssembly& a,
                 const ExpandedGraph& g, double level_energy, double step_seconds) {
  std::map<int, double> planned, realized;
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const auto& ed = g.edges()[e];
    if ((ed.kind == EdgeKind::Charge || ed.kind == EdgeKind::Discharge) && g.nodes()[ed.from].t == 1)
      planned[ed.source] += sol.x[a.layout.f0[e]] * edge_load_mw(ed, level_energy, step_seconds);
  }
  for (const auto& t : tasks)
    if (t.task == Task::Charge || t.task == Task::Discharge) {
      const auto& ed = g.edges()[t.edge];
      realized[ed.source] += edge_load_mw(ed, level_energy, step_seconds);
    }
  int held = 0;
  for (auto it = tasks.rbegin(); it != tasks.rend(); ++it) {
    if (it->task != Task::Charge) continue;
    const auto& ed = g.edges()[it->edge];
    if (realized[ed.source] <= planned[ed.source] + 1e-6) continue;
    realized[ed.source] -= edge_load_mw(ed, level_energy, step_seconds);
    it->task = Task::Idle;
    it->charge_use = 0;
    ++held;
  }
  return held;
}

}  // namespace

SimReport run_simulation(const Scenario& sc, SimMode mode, SimReport* partial) {
  const auto& cfg = sc.sim;
  if (cfg.horizon < 1 || cfg.resolve_every < 1) throw ValidationError("simulation horizon and cadence must be >= 1");
  validate_grid(sc.grid, sc.T);
  const int T = sc.T, H = cfg.horizon;
  const double h = sc.grid.step_hours();
  const auto routes = precompute_routes(sc.road);
  const auto window = build_expanded_graph(sc.road, sc.stations, H, sc.C, {true});
  if (mode != SimMode::Baseline) sc.coupling.validate(window, sc.grid);

  std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), std::uint64_t{0x5eed}};
  std::vector<std::uint64_t> seeds(3);
  seq.generate(seeds.begin(), seeds.end());
  std::mt19937_64 demand_rng(seeds[0]), power_rng(seeds[1]), sample_rng(seeds[2]);

  SimReport rep;
  rep.mode = mode;
  rep.seed = cfg.seed;
  World world;
  if (mode != SimMode::Baseline) {
    int id = 0;
    for (const auto& [nc, count] : sc.fleet.initial)
      for (long k = 0; k < std::lround(count); ++k) world.vehicles.push_back({id++, nc.first, nc.second});
  }
  rep.vehicles = static_cast<int>(world.vehicles.size());
  // Fleet modes draw the same customer stream so that runs stay comparable.
  if (mode != SimMode::Baseline) materialize(world, sc, cfg.noise_transport, demand_rng);

  std::optional<IsoSolution> frozen;
  if (mode == SimMode::Uncoordinated) {
    DispatchOptions o;
    o.shed_penalty = cfg.shed_penalty;
    frozen = solve_dispatch(sc.grid, {}, T, o);
  }

  std::vector<double> previous_p;
  const StepContext ctx{&sc, &routes, cfg.bpr_a, cfg.bpr_b};
  double lmp_sum = 0.0;
  int lmp_count = 0;
  try {
    for (int tick = 1; tick <= T; ++tick) {
      std::vector<double> realized;
      for (const auto& l : sc.grid.loads) {
        const double z = std::normal_distribution<double>(0.0, 1.0)(power_rng);
        realized.push_back(std::max(0.0, series_at(l.demand, tick, 0.0) * (1.0 + cfg.noise_power * z)));
      }
      GridModel gw = slice_grid(sc.grid, tick, H, T);
      for (std::size_t g = 0; g < gw.generators.size(); ++g)
        if (!previous_p.empty()) gw.generators[g].initial_output = previous_p[g];
      set_first_demand(gw, realized, H);

      std::vector<Assignment> tasks;
      if (mode != SimMode::Baseline && (tick - 1) % cfg.resolve_every == 0) {
        RhState st = make_state(world, H);
        std::map<std::pair<int, int>, double> now, waiting;
        for (const auto& c : world.new_arrivals) now[{c.origin, c.destination}] += 1.0;
        for (const auto& [od, n] : now) st.requests.push_back({od.first, od.second, 1, n});
        for (const auto& rq : sc.requests) {
          const int t = rq.departure_time - tick + 1;
          if (t >= 2 && t <= H && rq.rate > 0) st.requests.push_back({rq.origin, rq.destination, t, rq.rate});
        }
        std::map<std::pair<int, int>, int> waits;
        for (const auto& c : world.waiting) {
          waiting[{c.origin, c.destination}] += 1.0;
          waits[{c.origin, c.destination}] += tick - c.arrival_tick;
        }
        for (const auto& [od, n] : waiting) st.outstanding.push_back({od.first, od.second, n, waits[od]});

        RhForecast fc{gw, std::nullopt};
        if (mode == SimMode::Uncoordinated) {
          PriceTable p;
          for (const auto& s : sc.stations) {
            const int bus = sc.coupling.bus_of_station(s.node);
            for (int t = 1; t <= H; ++t)
              p.set(s.node, t, frozen->lmp.at({bus, std::min(tick + t - 1, T)}) * sc.fleet.level_energy / 3.6e9);
          }
          fc.prices = std::move(p);
        }
        auto assembly = assemble_rh(window, routes, st, fc, sc.fleet, sc.coupling, cfg);
        auto sol = lp::solve(assembly.problem);
        if (!sol.optimal()) throw lp::SolveError(sol.status, "receding-horizon LP at tick " + std::to_string(tick));
        for (std::size_t m = 0; m < st.requests.size(); ++m)
          if (st.requests[m].departure_time == 1) rep.dropped += sol.x[assembly.layout.drop[m]];
        auto sample = sample_actions(sol, assembly, window, routes, world.vehicles, st, sample_rng);
        rep.fallbacks += sample.fallbacks;
        tasks = std::move(sample.assignments);
        rep.held_back += hold_to_plan(tasks, sol, assembly, window, sc.fleet.level_energy, sc.grid.step_seconds);
      }
      if (mode == SimMode::Baseline)
        ++world.tick;
      else
        world = step_world(std::move(world), tasks, ctx, cfg.noise_transport, demand_rng);

      BusSeries extra;
      for (const auto& [bt, mw] : world.load) extra[{bt.first, 1}] += mw;
      GridModel g1 = slice_grid(sc.grid, tick, 1, T);
      for (std::size_t g = 0; g < g1.generators.size(); ++g)
        if (!previous_p.empty()) g1.generators[g].initial_output = previous_p[g];
      for (std::size_t i = 0; i < g1.loads.size(); ++i) g1.loads[i].demand = {realized[i]};
      DispatchOptions o;
      o.shed_penalty = cfg.shed_penalty;
      const auto iso = solve_dispatch(g1, extra, 1, o);
      previous_p.clear();
      for (const auto& p : iso.p) previous_p.push_back(p[0]);

      TickRecord rec;
      rec.tick = tick;
      double grid_spend = 0.0, tso_spend = 0.0;
      for (int b : sc.grid.buses) {
        const double lmp = iso.lmp.at({b, 1});
        const double d = g1.demand(b, 1);
        const double vl = extra.count({b, 1}) ? extra.at({b, 1}) : 0.0;
        const double shed = iso.shed.count({b, 1}) ? iso.shed.at({b, 1}) : 0.0;
        rec.lmp[{b, tick}] = lmp;
        rec.demand[{b, tick}] = d;
        rec.vehicle_load[{b, tick}] = vl;
        rec.shed[{b, tick}] = shed;
        lmp_sum += lmp;
        ++lmp_count;
        rep.energy_mwh += (d + vl - shed) * h;
        rep.fleet_energy_mwh += vl * h;
        grid_spend += lmp * d * h;
        tso_spend += lmp * vl * h;
      }
      rep.shed_mwh += iso.shed_energy;
      rep.grid_expenditure += to_micro(grid_spend);
      rep.tso_expenditure += to_micro(tso_spend);
      rep.generation_cost += to_micro(iso.generation_cost);
      rec.waiting = static_cast<int>(world.waiting.size() + world.new_arrivals.size());
      for (const auto& v : world.vehicles) rec.idle += v.task == Task::Idle;
      rep.series.push_back(std::move(rec));
      rep.ticks = tick;
    }
  } catch (const lp::SolveError&) {
    if (partial) {
      *partial = rep;
      partial->customers = world.customers;
      partial->served = world.served;
    }
    throw;
  }
  rep.customers = world.customers;
  rep.served = world.served;
  rep.unserved = static_cast<int>(world.waiting.size() + world.new_arrivals.size());
  rep.avg_trip_hours = world.served ? world.trip_steps * h / world.served : 0.0;
  rep.mean_lmp = lmp_count ? lmp_sum / lmp_count : 0.0;
  rep.charge_violations = world.charge_violations;
  return rep;
}

std::string SimReport::to_json() const {
  json j;
  j["mode"] = to_string(mode);
  j["ticks"] = ticks;
  j["seed"] = seed;
  j["vehicles"] = vehicles;
  j["customers"] = customers;
  j["served"] = served;
  j["unserved"] = unserved;
  j["dropped"] = dropped;
  j["fallbacks"] = fallbacks;
  j["held_back"] = held_back;
  j["avg_trip_hours"] = avg_trip_hours;
  j["energy_mwh"] = energy_mwh;
  j["fleet_energy_mwh"] = fleet_energy_mwh;
  j["shed_mwh"] = shed_mwh;
  j["mean_lmp"] = mean_lmp;
  j["grid_expenditure"] = format_micro(grid_expenditure);
  j["tso_expenditure"] = format_micro(tso_expenditure);
  j["generation_cost"] = format_micro(generation_cost);
  j["charge_violations"] = charge_violations;
  json series_j = json::array();
  for (const auto& r : series) {
    json row;
    row["tick"] = r.tick;
    row["waiting"] = r.waiting;
    row["idle"] = r.idle;
    json buses = json::array();
    for (const auto& [bt, lmp] : r.lmp)
      buses.push_back({{"bus", bt.first},
                       {"lmp", lmp},
                       {"demand", r.demand.at(bt)},
                       {"vehicle_load", r.vehicle_load.at(bt)},
                       {"shed", r.shed.at(bt)}});
    row["buses"] = std::move(buses);
    series_j.push_back(std::move(row));
  }
  j["series"] = std::move(series_j);
  return j.dump(2);
}

std::string SimReport::to_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "tick,bus,lmp,demand,vehicle_load,shed,waiting,idle\n";
  for (const auto& r : series)
    for (const auto& [bt, lmp] : r.lmp)
      os << r.tick << ',' << bt.first << ',' << lmp << ',' << r.demand.at(bt) << ',' << r.vehicle_load.at(bt) << ','
         << r.shed.at(bt) << ',' << r.waiting << ',' << r.idle << '\n';
  return os.str();
}

std::string SimReport::to_svg() const {
  // Two stacked panels: mean LMP and total shed per tick.
  const double W = 640, Hp = 180, pad = 40;
  std::vector<double> lmp, shed;
  for (const auto& r : series) {
    double s = 0, l = 0;
    for (const auto& [bt, v] : r.lmp) l += v;
    for (const auto& [bt, v] : r.shed) s += v;
    lmp.push_back(r.lmp.empty() ? 0 : l / r.lmp.size());
    shed.push_back(s);
  }
  auto panel = [&](const std::vector<double>& ys, double top, const char* label, const char* color) {
    std::ostringstream os;
    const double ymax = std::max(1e-9, *std::max_element(ys.begin(), ys.end()));
    const double n = std::max<std::size_t>(1, ys.size() - 1);
    os << "<text x='" << pad << "' y='" << top - 6 << "' font-size='12'>" << label << " (max " << ymax
       << ")</text>\n";
    os << "<rect x='" << pad << "' y='" << top << "' width='" << W - 2 * pad << "' height='" << Hp - 2 * pad
       << "' fill='none' stroke='#999'/>\n<polyline fill='none' stroke='" << color << "' points='";
    for (std::size_t i = 0; i < ys.size(); ++i)
      os << pad + (W - 2 * pad) * i / n << ',' << top + (Hp - 2 * pad) * (1 - ys[i] / ymax) << ' ';
    os << "'/>\n";
    return os.str();
  };
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << 2 * Hp << "'>\n";
  if (!series.empty()) {
    os << panel(lmp, pad, "mean LMP", "#1f77b4");
    os << panel(shed, Hp + pad, "shed MW", "#d62728");
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace pamod
