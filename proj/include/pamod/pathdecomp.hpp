#pragma once

// Decomposition of bundled customer flows into path flows and per-request flows.

#include <map>
#include <string>
#include <vector>

#include "pamod/fleet.hpp"
#include "pamod/network.hpp"

namespace pamod {

struct PathFlow {
  std::vector<int> nodes;  // expanded node ids, first to last
  std::vector<int> edges;  // nodes.size() - 1 edge ids (a cycle repeats its first node at the end)
  double intensity = 0.0;
};

struct Decomposition {
  std::vector<PathFlow> paths;
  std::vector<PathFlow> cycles;
};

// Values below this are zeroed before decomposing.
inline constexpr double kCrumb = 1e-9;

// Plain digraph: arcs[e] = (from, to). Node ids are 0..num_nodes-1.
Decomposition decompose_flow(int num_nodes, const std::vector<std::pair<int, int>>& arcs,
                             const std::vector<double>& flow, const std::map<int, double>& supply,
                             const std::map<int, double>& demand);

// `supply` and `demand` map expanded node ids to injected / extracted flow.
// Throws ValidationError naming the node when conservation fails by more than
// 1e-9 (relative to the largest flow, floored at 1).
Decomposition decompose_flow(const ExpandedGraph& graph, const std::vector<double>& flow,
                             const std::map<int, double>& supply, const std::map<int, double>& demand);

struct RequestRouteSet {
  int request = 0;  // index into the merged request list
  TripRequest trip;
  std::vector<PathFlow> paths;
  double total = 0.0;
};

// Groups paths by origin node and departure step. Throws ValidationError on a
// path whose start matches no request of the bundle.
std::vector<RequestRouteSet> assign_to_requests(const ExpandedGraph& graph, const std::vector<PathFlow>& paths,
                                                const BundleIndex& bundles, int bundle);

// Edge flows of each route set, in the order given.
std::vector<std::vector<double>> per_request_flows(const std::vector<RequestRouteSet>& sets, std::size_t num_edges);

// Largest continuity residual of a per-request flow, with the departure and
// arrival splits read off the path endpoints, together with |sum of splits - rate|.
double request_flow_residual(const ExpandedGraph& graph, const RequestRouteSet& set,
                             const std::vector<double>& flow);

struct RouteReport {
  std::vector<RequestRouteSet> requests;     // all bundles, in bundle order
  std::vector<std::vector<PathFlow>> cycles; // per bundle
  Decomposition rebalancing;                 // empty-vehicle flow
  double reconstruction_error = 0.0;         // max over bundles and edges
  double continuity_residual = 0.0;          // max over requests
};

// Decomposes every bundle (concurrently) and the rebalancing flow.
RouteReport decompose_routes(const TsoSolution& tso, const FleetLayout& layout, const ExpandedGraph& graph,
                             const FleetSpec& fleet);

// One JSON object per request route set, newline separated.
std::string route_sets_jsonl(const std::vector<RequestRouteSet>& sets, const ExpandedGraph& graph);

}  // namespace pamod
