#pragma once

// Scenario files, instance generators and discretization helpers.

#include <cstdint>
#include <string>
#include <vector>

#include "pamod/grid.hpp"
#include "pamod/joint.hpp"
#include "pamod/network.hpp"

namespace pamod {

struct SimConfig {
  int horizon = 4;               // LP steps per receding-horizon solve
  int resolve_every = 1;         // ticks between solves
  int end_charge_threshold = 1;  // minimum charge at the end of each window
  double drop_penalty = 1000.0;  // currency per dropped customer
  double shed_penalty = 6000.0;  // value of lost load, currency per MWh
  double noise_transport = 0.10;
  double noise_power = 0.05;
  double bpr_a = 0.15;
  double bpr_b = 4.0;
  std::uint64_t seed = 1;
  bool operator==(const SimConfig&) const = default;
};

struct Scenario {
  RoadNetwork road;
  std::vector<ChargingStation> stations;
  FleetSpec fleet;
  std::vector<TripRequest> requests;
  GridModel grid;
  CouplingMap coupling;
  SimConfig sim;
  int T = 1;
  double step_seconds = 3600.0;
  int C = 1;
  bool waiting_edges = false;

  ExpandedGraph graph() const;
  ExpansionOptions expansion() const { return {waiting_edges}; }
  // validate_scenario plus grid and coupling checks.
  std::vector<Diagnostic> diagnostics() const;
};

bool operator==(const Scenario& a, const Scenario& b);

inline constexpr int kSchemaVersion = 1;

// Throws SchemaError (with an RFC 6901 pointer) on any schema violation,
// including unknown fields.
Scenario scenario_from_json(const std::string& text);
std::string scenario_to_json(const Scenario& s);
Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& s, const std::string& path);

struct GeneratorParams {
  int road_nodes = 4;
  int buses = 3;
  int T = 6;
  int C = 4;
  int vehicles = 10;
  double demand = 1.0;        // mean request rate
  double grid_margin = 1.0;   // < 1 tightens line limits and delivery caps
};

// kind: "micro" (2 nodes, 2 buses, fixed data), "micro-tight" (same network
// where coordination pays off), "grid-ladder" (line of buses
// with a tight delivery cap), "tight-feeder" (3-node ring on two weak buses,
// 1 MW per charging vehicle), "random". Deterministic per seed.
Scenario generate_instance(const std::string& kind, const GeneratorParams& params, std::uint64_t seed);

// Energy in kWh to charge levels, rounded half-up against J_C (joules per level).
int kwh_to_levels(double kwh, double level_energy);
// Seconds to time steps, rounded up.
int seconds_to_steps(double seconds, double step_seconds);

}  // namespace pamod
