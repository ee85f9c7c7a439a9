#include "pamod/network.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

#include "pamod/error.hpp"

namespace pamod {

bool RoadNetwork::has_node(int v) const {
  return std::find(nodes.begin(), nodes.end(), v) != nodes.end();
}

double FleetSpec::size() const {
  double n = 0.0;
  for (const auto& [key, count] : initial) n += count;
  return n;
}

const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::Road: return "road";
    case EdgeKind::Charge: return "charge";
    case EdgeKind::Discharge: return "discharge";
    case EdgeKind::Wait: return "wait";
  }
  return "?";
}

int ExpandedGraph::node_id(int road, int t, int c) const {
  auto it = road_pos_.find(road);
  if (it == road_pos_.end() || t < 1 || t > T_ || c < 1 || c > C_) return -1;
  return (it->second * T_ + (t - 1)) * C_ + (c - 1);
}

int ExpandedGraph::station_at(int road) const {
  auto it = station_pos_.find(road);
  return it == station_pos_.end() ? -1 : it->second;
}

std::size_t ExpandedGraph::count(EdgeKind k) const {
  return static_cast<std::size_t>(
      std::count_if(edges_.begin(), edges_.end(), [k](const ExpandedEdge& e) { return e.kind == k; }));
}

std::string ExpandedGraph::edge_list_csv() const {
  std::ostringstream out;
  out << "id,kind,from_node,from_t,from_c,to_node,to_t,to_c,source\n";
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const auto& e = edges_[i];
    const auto& a = nodes_[e.from];
    const auto& b = nodes_[e.to];
    out << i << ',' << to_string(e.kind) << ',' << a.road << ',' << a.t << ',' << a.c << ','
        << b.road << ',' << b.t << ',' << b.c << ',' << e.source << '\n';
  }
  return out.str();
}

namespace {

void check_inputs(const RoadNetwork& road, const std::vector<ChargingStation>& stations, int T,
                  int C) {
  if (T < 1) throw ValidationError("horizon T must be at least 1");
  if (C < 1) throw ValidationError("charge levels C must be at least 1");
  std::set<int> seen;
  for (int v : road.nodes)
    if (!seen.insert(v).second) throw ValidationError("duplicate road node " + std::to_string(v));
  for (std::size_t i = 0; i < road.edges.size(); ++i) {
    const auto& e = road.edges[i];
    const std::string name = "road edge " + std::to_string(i);
    if (!seen.count(e.tail) || !seen.count(e.head)) throw ValidationError(name + " has an unknown endpoint");
    if (e.tail == e.head) throw ValidationError(name + " is a self-loop");
    if (e.traversal_time < 1) throw ValidationError(name + " has traversal_time < 1");
    if (std::abs(e.charge_cost) > C) throw ValidationError(name + " has |charge_cost| > C");
    if (!(e.capacity >= 0.0) || !(e.length_km >= 0.0))
      throw ValidationError(name + " has negative capacity or length");
  }
  std::set<int> station_nodes;
  for (std::size_t i = 0; i < stations.size(); ++i) {
    const auto& s = stations[i];
    const std::string name = "station " + std::to_string(i);
    if (!seen.count(s.node)) throw ValidationError(name + " sits on unknown node " + std::to_string(s.node));
    if (!station_nodes.insert(s.node).second) throw ValidationError(name + " duplicates a station node");
    if (s.charge_rate < 1 || s.charge_rate > C) throw ValidationError(name + " has charge_rate outside 1..C");
    if (s.discharge_rate > -1 || s.discharge_rate < -C)
      throw ValidationError(name + " has discharge_rate outside -C..-1");
    if (s.capacity < 0) throw ValidationError(name + " has negative capacity");
  }
}

}  // namespace

ExpandedGraph build_expanded_graph(const RoadNetwork& road, const std::vector<ChargingStation>& stations,
                                   int T, int C, const ExpansionOptions& options) {
  check_inputs(road, stations, T, C);
  ExpandedGraph g;
  g.T_ = T;
  g.C_ = C;
  g.road_nodes_ = road.nodes;
  std::sort(g.road_nodes_.begin(), g.road_nodes_.end());
  for (std::size_t i = 0; i < g.road_nodes_.size(); ++i) g.road_pos_[g.road_nodes_[i]] = static_cast<int>(i);
  g.stations_ = stations;
  g.road_edges_ = road.edges;
  for (std::size_t i = 0; i < stations.size(); ++i) g.station_pos_[stations[i].node] = static_cast<int>(i);

  for (int v : g.road_nodes_)
    for (int t = 1; t <= T; ++t)
      for (int c = 1; c <= C; ++c) g.nodes_.push_back({v, t, c});
  g.out_.assign(g.nodes_.size(), {});
  g.in_.assign(g.nodes_.size(), {});

  std::map<int, std::vector<int>> links_from;
  for (std::size_t i = 0; i < road.edges.size(); ++i)
    links_from[road.edges[i].tail].push_back(static_cast<int>(i));
  std::vector<int> copies(road.edges.size(), 0);

  auto add = [&](int from, int to, EdgeKind kind, int source, double len) {
    const auto& a = g.nodes_[from];
    const auto& b = g.nodes_[to];
    const int id = static_cast<int>(g.edges_.size());
    g.edges_.push_back({from, to, kind, source, b.t - a.t, b.c - a.c, len});
    g.out_[from].push_back(id);
    g.in_[to].push_back(id);
  };

  for (int id = 0; id < static_cast<int>(g.nodes_.size()); ++id) {
    const auto n = g.nodes_[id];
    for (int li : links_from[n.road]) {
      const auto& e = road.edges[li];
      const int to = g.node_id(e.head, n.t + e.traversal_time, n.c - e.charge_cost);
      if (to < 0) continue;
      add(id, to, EdgeKind::Road, li, e.length_km);
      ++copies[li];
    }
    const int s = g.station_at(n.road);
    if (s >= 0) {
      const auto& st = stations[s];
      const int up = g.node_id(n.road, n.t + 1, n.c + st.charge_rate);
      if (up >= 0) add(id, up, EdgeKind::Charge, s, 0.0);
      const int down = g.node_id(n.road, n.t + 1, n.c + st.discharge_rate);
      if (down >= 0) add(id, down, EdgeKind::Discharge, s, 0.0);
    }
    if (options.waiting_edges) {
      const int next = g.node_id(n.road, n.t + 1, n.c);
      if (next >= 0) add(id, next, EdgeKind::Wait, -1, 0.0);
    }
  }
  if (T > 1)
    for (std::size_t i = 0; i < copies.size(); ++i)
      if (copies[i] == 0)
        g.warnings_.push_back("road edge " + std::to_string(i) + " (" + std::to_string(road.edges[i].tail) +
                              "->" + std::to_string(road.edges[i].head) + ") has no feasible copy");
  return g;
}

std::vector<Diagnostic> validate_scenario(const RoadNetwork& road,
                                          const std::vector<ChargingStation>& stations,
                                          const FleetSpec& fleet,
                                          const std::vector<TripRequest>& requests, int T, int C,
                                          const ExpansionOptions& options) {
  using S = Diagnostic::Severity;
  std::vector<Diagnostic> out;
  auto violation = [&](std::string subject, std::string msg) {
    out.push_back({S::Violation, std::move(subject), std::move(msg)});
  };
  if (T < 1) violation("horizon", "T must be at least 1");
  if (C < 1) violation("levels", "C must be at least 1");

  std::set<int> nodes;
  for (int v : road.nodes)
    if (!nodes.insert(v).second) violation("road.nodes", "duplicate node " + std::to_string(v));
  for (std::size_t i = 0; i < road.edges.size(); ++i) {
    const auto& e = road.edges[i];
    const std::string subj = "road.edges[" + std::to_string(i) + "]";
    if (!nodes.count(e.tail) || !nodes.count(e.head)) violation(subj, "endpoint not in road network");
    if (e.tail == e.head) violation(subj, "self-loop");
    if (e.traversal_time < 1 || (T >= 1 && e.traversal_time > T))
      violation(subj, "traversal_time outside 1..T");
    if (std::abs(e.charge_cost) > C) violation(subj, "|charge_cost| exceeds C");
    if (!(e.capacity >= 0.0)) violation(subj, "negative capacity");
    if (!(e.length_km >= 0.0)) violation(subj, "negative length");
  }
  std::set<int> station_nodes;
  for (std::size_t i = 0; i < stations.size(); ++i) {
    const auto& s = stations[i];
    const std::string subj = "station[" + std::to_string(i) + "]";
    if (!nodes.count(s.node)) violation(subj, "node " + std::to_string(s.node) + " is not in the road network");
    if (!station_nodes.insert(s.node).second) violation(subj, "second station at the same node");
    if (s.charge_rate < 1 || s.charge_rate > C) violation(subj, "charge_rate outside 1..C");
    if (s.discharge_rate > -1 || s.discharge_rate < -C) violation(subj, "discharge_rate outside -C..-1");
    if (s.capacity < 0) violation(subj, "negative capacity");
  }
  if (fleet.size() <= 0.0) violation("fleet", "fleet has no vehicles");
  for (const auto& [key, n] : fleet.initial) {
    const std::string subj = "fleet.initial(" + std::to_string(key.first) + "," + std::to_string(key.second) + ")";
    if (!nodes.count(key.first)) violation(subj, "unknown node");
    if (key.second < 1 || key.second > C) violation(subj, "charge level outside 1..C");
    if (n < 0.0 || n != std::floor(n)) violation(subj, "vehicle count must be a nonnegative integer");
  }
  if (fleet.final_constraint.mode == FinalConstraint::Mode::Threshold) {
    if (fleet.final_constraint.threshold < 1 || fleet.final_constraint.threshold > C)
      violation("fleet.final", "threshold outside 1..C");
  } else {
    double total = 0.0;
    for (const auto& [key, n] : fleet.final_constraint.fixed) {
      total += n;
      if (!nodes.count(key.first) || key.second < 1 || key.second > C)
        violation("fleet.final", "fixed entry outside the graph");
    }
    if (std::abs(total - fleet.size()) > 1e-9) violation("fleet.final", "fixed final count differs from fleet size");
  }
  if (fleet.battery_wear_cost < 0 || fleet.value_of_time < 0 || fleet.distance_cost < 0 ||
      !(fleet.level_energy > 0))
    violation("fleet", "costs must be nonnegative and level_energy positive");

  bool requests_ok = true;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& r = requests[i];
    const std::string subj = "request[" + std::to_string(i) + "]";
    bool ok = true;
    if (!nodes.count(r.origin) || !nodes.count(r.destination)) { violation(subj, "unknown origin or destination"); ok = false; }
    if (r.origin == r.destination) { violation(subj, "origin equals destination"); ok = false; }
    if (r.departure_time < 1 || r.departure_time > T) { violation(subj, "departure_time outside 1..T"); ok = false; }
    if (!(r.rate >= 0.0)) { violation(subj, "negative rate"); ok = false; }
    requests_ok = requests_ok && ok;
  }
  const bool structural_ok = out.empty();
  if (!structural_ok || !requests_ok) return out;

  // Reachability over the expanded graph.
  const auto g = build_expanded_graph(road, stations, T, C, options);
  for (const auto& w : g.warnings()) out.push_back({S::Warning, "road", w});
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& r = requests[i];
    if (r.rate == 0.0) continue;
    std::vector<char> seen(g.nodes().size(), 0);
    std::deque<int> queue;
    for (int c = 1; c <= C; ++c) {
      const int id = g.node_id(r.origin, r.departure_time, c);
      seen[id] = 1;
      queue.push_back(id);
    }
    bool reached = false;
    while (!queue.empty() && !reached) {
      const int u = queue.front();
      queue.pop_front();
      for (int e : g.out_edges(u)) {
        const int w = g.edges()[e].to;
        if (seen[w]) continue;
        seen[w] = 1;
        if (g.nodes()[w].road == r.destination) { reached = true; break; }
        queue.push_back(w);
      }
    }
    if (!reached)
      out.push_back({S::Warning, "request[" + std::to_string(i) + "]",
                     "destination " + std::to_string(r.destination) + " is unreachable within the horizon"});
  }
  return out;
}

}  // namespace pamod
