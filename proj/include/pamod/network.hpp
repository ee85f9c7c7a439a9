#pragma once

// Road network, charging stations, fleet and the time/charge-expanded graph.

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace pamod {

struct RoadEdge {
  int tail = 0;
  int head = 0;
  double length_km = 0.0;
  int traversal_time = 1;  // steps
  int charge_cost = 0;     // levels consumed, negative = regeneration
  double capacity = 0.0;   // vehicles per step
};

struct RoadNetwork {
  std::vector<int> nodes;
  std::vector<RoadEdge> edges;

  bool has_node(int v) const;
};

struct ChargingStation {
  int node = 0;
  int charge_rate = 1;      // levels per step, > 0
  int discharge_rate = -1;  // levels per step, < 0
  int capacity = 0;         // vehicles
};

struct TripRequest {
  int origin = 0;
  int destination = 0;
  int departure_time = 1;
  double rate = 0.0;  // customers per step

  bool operator==(const TripRequest&) const = default;
};

using NodeCharge = std::pair<int, int>;  // (road node, charge level)

struct FinalConstraint {
  enum class Mode { Fixed, Threshold };
  Mode mode = Mode::Threshold;
  std::map<NodeCharge, double> fixed;  // Fixed mode: exact vehicle counts at t = T
  int threshold = 1;                   // Threshold mode: minimum final charge level

  // Compares only the fields the mode uses.
  bool operator==(const FinalConstraint& o) const {
    if (mode != o.mode) return false;
    return mode == Mode::Fixed ? fixed == o.fixed : threshold == o.threshold;
  }
};

struct FleetSpec {
  std::map<NodeCharge, double> initial;  // vehicles at t = 1
  FinalConstraint final_constraint;
  double battery_wear_cost = 0.0;  // currency per charge level moved
  double level_energy = 3.6e6;     // joules per charge level
  double value_of_time = 0.0;      // currency per customer-step
  double distance_cost = 0.0;      // currency per km

  double size() const;
  bool operator==(const FleetSpec&) const = default;
};

enum class EdgeKind { Road, Charge, Discharge, Wait };

const char* to_string(EdgeKind k);

struct ExpandedNode {
  int road = 0;
  int t = 1;
  int c = 1;
};

struct ExpandedEdge {
  int from = 0;
  int to = 0;
  EdgeKind kind = EdgeKind::Road;
  int source = -1;  // road edge index for Road, station index for Charge/Discharge
  int dt = 1;       // t_to - t_from
  int dc = 0;       // c_to - c_from
  double length_km = 0.0;
};

struct ExpansionOptions {
  // Zero-cost (v,t,c) -> (v,t+1,c) edges at every road node. Off by default so
  // that the graph contains only road and station copies.
  bool waiting_edges = false;
};

class ExpandedGraph {
 public:
  int horizon() const { return T_; }
  int levels() const { return C_; }
  const std::vector<ExpandedNode>& nodes() const { return nodes_; }
  const std::vector<ExpandedEdge>& edges() const { return edges_; }
  const std::vector<int>& road_nodes() const { return road_nodes_; }
  const std::vector<ChargingStation>& stations() const { return stations_; }
  const std::vector<RoadEdge>& road_edges() const { return road_edges_; }

  // -1 if (road, t, c) is outside the graph.
  int node_id(int road, int t, int c) const;
  const std::vector<int>& out_edges(int node) const { return out_[node]; }
  const std::vector<int>& in_edges(int node) const { return in_[node]; }
  // Station index at a road node, or -1.
  int station_at(int road) const;

  std::size_t count(EdgeKind k) const;
  const std::vector<std::string>& warnings() const { return warnings_; }

  // id,kind,from_node,from_t,from_c,to_node,to_t,to_c,source
  std::string edge_list_csv() const;

 private:
  friend ExpandedGraph build_expanded_graph(const RoadNetwork&, const std::vector<ChargingStation>&,
                                            int, int, const ExpansionOptions&);
  int T_ = 0, C_ = 0;
  std::vector<int> road_nodes_;
  std::map<int, int> road_pos_;
  std::map<int, int> station_pos_;
  std::vector<ChargingStation> stations_;
  std::vector<RoadEdge> road_edges_;
  std::vector<ExpandedNode> nodes_;
  std::vector<ExpandedEdge> edges_;
  std::vector<std::vector<int>> out_, in_;
  std::vector<std::string> warnings_;
};

// Throws ValidationError when T or C is below 1 or inputs break their invariants.
// Links that produce no copy at all are reported in warnings().
ExpandedGraph build_expanded_graph(const RoadNetwork& road, const std::vector<ChargingStation>& stations,
                                   int T, int C, const ExpansionOptions& options = {});

struct Diagnostic {
  enum class Severity { Violation, Warning };
  Severity severity = Severity::Violation;
  std::string subject;  // e.g. "station[2]", "request[0]"
  std::string message;
};

std::vector<Diagnostic> validate_scenario(const RoadNetwork& road,
                                          const std::vector<ChargingStation>& stations,
                                          const FleetSpec& fleet,
                                          const std::vector<TripRequest>& requests, int T, int C,
                                          const ExpansionOptions& options = {});

}  // namespace pamod
