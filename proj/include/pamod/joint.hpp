#pragma once

// Coupling of fleet and grid through charging-station loads, the joint
// problem, the equilibrium check and the uncoordinated baseline pipeline.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pamod/fleet.hpp"
#include "pamod/grid.hpp"

namespace pamod {

struct CouplingMap {
  std::map<int, int> station_of_bus;  // load bus -> station road node

  // -1 when the station node is not mapped.
  int bus_of_station(int station_node) const;
  // Every station mapped exactly once, every bus in the grid.
  void validate(const ExpandedGraph& graph, const GridModel& grid) const;
  // Station edges drawing (charging = true) or injecting power at (bus, t).
  std::vector<int> edges_at(const ExpandedGraph& graph, int bus, int t, bool charging) const;
};

// MW drawn at the station bus by one vehicle per step on a station edge.
double edge_load_mw(const ExpandedEdge& edge, double level_energy, double step_seconds);

// Vehicle-induced load per (bus, t); negative values are net injections.
BusSeries coupling_loads(const TsoSolution& tso, const ExpandedGraph& graph, const CouplingMap& map,
                         double level_energy, double step_seconds);

struct JointOptions {
  std::optional<double> shed_penalty;  // off by default, as in plain dispatch
};

struct JointAssembly {
  lp::LpProblem problem;
  FleetLayout fleet;
  GridLayout grid;
};

JointAssembly assemble_pamod(const ExpandedGraph& graph, const std::vector<TripRequest>& requests,
                             const FleetSpec& fleet, const GridModel& grid, const CouplingMap& map, int T,
                             const JointOptions& options = {});

struct JointSolution {
  TsoSolution tso;
  IsoSolution iso;
  PriceTable prices;        // per charge level, from the joint LMPs
  BusSeries vehicle_load;   // MW
  double objective = 0.0;   // V_T*T_M + V_D*D_V + V_B + C_G (+ shed cost)
  bool degenerate = false;  // some basic variable sits at a bound
  lp::LpSolution raw;
};

JointSolution extract_joint(const lp::LpSolution& solution, const JointAssembly& assembly,
                            const ExpandedGraph& graph, const FleetSpec& fleet, const GridModel& grid,
                            const CouplingMap& map);

// Assemble, solve and extract; throws lp::SolveError if not optimal.
JointSolution solve_joint(const ExpandedGraph& graph, const std::vector<TripRequest>& requests,
                          const FleetSpec& fleet, const GridModel& grid, const CouplingMap& map, int T,
                          const JointOptions& options = {});

// Largest |delivered + shed - (demand + vehicle load)| over (bus, t).
double coupling_residual(const JointSolution& joint, const GridModel& grid, int T);

struct GeneratorCheck {
  int generator = 0;
  double schedule_profit = 0.0;
  double best_profit = 0.0;
  double gap = 0.0;  // (best - schedule) / max(|best|, 1)
};

struct EquilibriumReport {
  bool passed = false;
  double tol = 0.0;          // tolerance actually applied
  bool degenerate = false;
  double tso_optimum = 0.0;  // priced fleet LP optimum
  double tso_cost = 0.0;     // joint fleet flows evaluated at the same prices
  double tso_gap = 0.0;
  std::vector<GeneratorCheck> generators;
  std::vector<std::string> violations;
  std::vector<std::string> warnings;
};

// Re-solves the priced fleet problem and every generator's profit problem at
// the joint prices (concurrently) and compares objectives.
EquilibriumReport verify_equilibrium(const JointSolution& joint, const ExpandedGraph& graph,
                                     const std::vector<TripRequest>& requests, const FleetSpec& fleet,
                                     const GridModel& grid, const CouplingMap& map, double tol);

struct UncoordinatedResult {
  IsoSolution baseline;       // dispatch without the fleet
  PriceTable prices;          // baseline LMPs per charge level
  TsoSolution tso;            // fleet plan at those prices
  BusSeries vehicle_load;
  IsoSolution redispatch;     // dispatch with the induced load and shedding
  double social_cost = 0.0;   // fleet operating cost + C_G + shed cost
  double tso_expenditure = 0.0;  // electricity bill at the redispatch LMPs
};

UncoordinatedResult run_uncoordinated(const ExpandedGraph& graph, const std::vector<TripRequest>& requests,
                                      const FleetSpec& fleet, const GridModel& grid, const CouplingMap& map,
                                      int T, double shed_penalty);

}  // namespace pamod
