#pragma once

// The fleet operator's vehicle routing and charging LP over bundled customer
// flows and the rebalancing flow.

#include <map>
#include <vector>

#include "pamod/lp.hpp"
#include "pamod/network.hpp"

namespace pamod {

// Price per charge level at (station node, t); charging and discharging share it.
class PriceTable {
 public:
  void set(int station_node, int t, double price) { table_[{station_node, t}] = price; }
  // Throws ValidationError when the entry is missing.
  double at(int station_node, int t) const;
  bool has(int station_node, int t) const { return table_.count({station_node, t}) > 0; }
  const std::map<std::pair<int, int>, double>& entries() const { return table_; }

  // Zero price for every station and step 1..T.
  static PriceTable flat(const std::vector<ChargingStation>& stations, int T, double value = 0.0);

 private:
  std::map<std::pair<int, int>, double> table_;
};

struct BundleIndex {
  std::vector<TripRequest> requests;       // merged, positive rate only
  std::vector<int> destinations;           // sorted
  std::vector<std::vector<int>> members;   // per destination, indices into requests
  std::vector<int> bundle_of;              // per request, index into destinations
};

// Sums requests sharing (origin, destination, departure_time) and drops zero rates.
BundleIndex merge_requests(const std::vector<TripRequest>& requests);

// Column and row indices of the fleet block inside an LpProblem.
struct FleetLayout {
  BundleIndex bundles;
  std::vector<int> f0;                      // per edge
  std::vector<std::vector<int>> fb;         // [bundle][edge]
  std::vector<std::vector<int>> lambda_in;  // [request][c-1]
  std::vector<std::vector<int>> lambda_out; // [bundle][(t-1)*C + c-1]
  std::map<NodeCharge, int> final_count;    // (road node, c) -> column
  std::vector<int> rebalance_rows;          // per expanded node
};

struct VrcpOptions {
  bool include_energy_cost = true;  // V_E term; the joint problem drops it
};

struct VrcpAssembly {
  lp::LpProblem problem;
  FleetLayout layout;
};

// Appends the fleet variables and rows to `lp`. `prices` may be null when
// options.include_energy_cost is false.
FleetLayout add_fleet_block(lp::LpProblem& lp, const ExpandedGraph& graph,
                            const std::vector<TripRequest>& requests, const FleetSpec& fleet,
                            const PriceTable* prices, const VrcpOptions& options);

VrcpAssembly assemble_vrcp(const ExpandedGraph& graph, const std::vector<TripRequest>& requests,
                           const FleetSpec& fleet, const PriceTable& prices,
                           const VrcpOptions& options = {});

struct CostBreakdown {
  double travel_time = 0.0;   // T_M, customer-steps
  double distance = 0.0;      // D_V, km
  double energy = 0.0;        // V_E, currency
  double battery = 0.0;       // V_B, currency (wear cost included)

  // V_T*T_M + V_D*D_V + V_E + V_B
  double total(const FleetSpec& fleet) const;
  // Same without V_E.
  double operating(const FleetSpec& fleet) const;
};

struct TsoSolution {
  std::vector<double> f0;                       // per edge
  std::vector<std::vector<double>> fb;          // [bundle][edge]
  std::vector<std::vector<double>> lambda_in;   // [request][c-1]
  std::vector<std::vector<double>> lambda_out;  // [bundle][(t-1)*C + c-1]
  std::map<NodeCharge, double> final_distribution;
  CostBreakdown costs;                          // at the prices the LP was built with

  // f0 + sum of bundles on edge e.
  double total_flow(int edge) const;
};

// Throws lp::SolveError when the solution is not optimal and ValidationError
// when invariants fail beyond 1e-7.
TsoSolution extract_tso_solution(const lp::LpSolution& solution, const FleetLayout& layout,
                                 const ExpandedGraph& graph, const FleetSpec& fleet,
                                 const PriceTable* prices);

// Recomputes the four cost terms from raw flows. A null price table gives V_E = 0.
CostBreakdown cost_breakdown(const TsoSolution& sol, const ExpandedGraph& graph, const FleetSpec& fleet,
                             const PriceTable* prices);

// Largest absolute residual of the bundled balance, rebalancing balance and
// intensity rows evaluated on the extracted flows.
double fleet_conservation_residual(const TsoSolution& sol, const FleetLayout& layout,
                                   const ExpandedGraph& graph, const FleetSpec& fleet);

}  // namespace pamod
