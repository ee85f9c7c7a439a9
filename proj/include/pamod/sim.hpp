#pragma once

// Receding-horizon controller with sampled vehicle tasks, and the agent-based
// world it drives (BPR congestion, noisy demand, outstanding customers,
// real-time dispatch with load shedding).

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "pamod/scenario.hpp"

namespace pamod {

struct PrecomputedRoute {
  int origin = 0;
  int destination = 0;
  std::vector<int> links;  // road edge indices in travel order
  int time = 0;            // steps
  int charge = 0;          // levels
};

// Fastest free-flow route for every ordered pair of connected road nodes.
using RouteTable = std::map<std::pair<int, int>, PrecomputedRoute>;
RouteTable precompute_routes(const RoadNetwork& road);

struct OutstandingRequest {
  int origin = 0;
  int destination = 0;
  double rate = 0.0;      // waiting customers
  int wait_steps = 0;     // summed over the customers
};

enum class Task { Idle, ServeCustomer, Rebalance, Charge, Discharge };
const char* to_string(Task t);

struct VehicleAgent {
  int id = 0;
  int node = 0;       // current node, or destination while en route
  int charge = 1;
  Task task = Task::Idle;
  int remaining = 0;  // steps until the task completes
  int charge_delta = 0;  // applied on completion
};

// State handed to the receding-horizon LP. Window steps are relative: t = 1 is now.
struct RhState {
  std::map<NodeCharge, double> idle;                     // vehicles available at t = 1
  std::map<std::tuple<int, int, int>, double> arriving;  // (node, t, c) busy vehicles freed at t
  std::vector<TripRequest> requests;                     // departures inside the window
  std::vector<OutstandingRequest> outstanding;
};

// Prices the fleet sees when the grid is not part of the problem.
struct RhForecast {
  GridModel grid;                   // window slice, t = 1..H
  std::optional<PriceTable> prices;  // set: fleet-only problem with frozen prices
};

struct RhLayout {
  int H = 0;
  std::vector<int> f0;                                // per window edge
  std::vector<std::vector<int>> lambda_in;            // [request][c-1], -1 where the trip cannot be made
  std::vector<int> drop;                              // per request
  std::vector<std::vector<int>> outstanding_in;       // [outstanding][(t-1)*C + c-1], -1 when infeasible
  std::vector<int> outstanding_drop;
  std::map<NodeCharge, int> final_count;
  std::optional<GridLayout> grid;
  std::vector<double> residual_capacity;              // per (link, t): index link*H + t-1
};

struct RhAssembly {
  lp::LpProblem problem;
  RhLayout layout;
};

// Throws ValidationError when a request or outstanding request has no route.
RhAssembly assemble_rh(const ExpandedGraph& window, const RouteTable& routes, const RhState& state,
                       const RhForecast& forecast, const FleetSpec& fleet, const CouplingMap& map,
                       const SimConfig& config);

struct Assignment {
  int vehicle = 0;
  Task task = Task::Idle;
  int edge = -1;     // sampled window edge for idle-vehicle tasks
  int request = -1;  // index into RhState::requests or outstanding (see from_outstanding)
  bool from_outstanding = false;
  int origin = 0;  // customer trip endpoints for ServeCustomer
  int destination = 0;
  bool fallback = false;
  std::vector<int> path;  // road links driven, pickup leg first
  int charge_use = 0;
};

struct SampleResult {
  std::vector<Assignment> assignments;
  // Customers left waiting, per request / outstanding request.
  std::vector<int> unserved;
  std::vector<int> unserved_outstanding;
  int fallbacks = 0;
};

// Draws ceil(rate) charge levels per departing request, (t, c)
// per outstanding customer (acting on t = 1 only) and one edge per remaining
// idle vehicle proportional to the first-step rebalancing flow.
SampleResult sample_actions(const lp::LpSolution& solution, const RhAssembly& assembly, const ExpandedGraph& window,
                            const RouteTable& routes, const std::vector<VehicleAgent>& agents, const RhState& state,
                            std::mt19937_64& rng);

// t_ff * (1 + a * (flow / capacity)^b). Capacity <= 0 or infinite leaves t_ff.
double bpr_time(double free_flow, double flow, double capacity, double a, double b);

struct Customer {
  int origin = 0;
  int destination = 0;
  int arrival_tick = 0;
};

struct World {
  int tick = 1;
  std::vector<VehicleAgent> vehicles;
  std::vector<Customer> waiting;        // arrived, not yet picked up
  std::vector<Customer> new_arrivals;   // arrived at the current tick
  int customers = 0;         // materialized so far
  int served = 0;
  double trip_steps = 0.0;   // wait + travel, summed over served customers
  BusSeries load;            // realized vehicle load of the last step, MW
  int charge_violations = 0;
};

struct StepContext {
  const Scenario* scenario = nullptr;
  const RouteTable* routes = nullptr;
  double bpr_a = 0.15;
  double bpr_b = 4.0;
};

// Applies the assignments, advances one step, then materializes the next
// step's noisy customer arrivals. `demand_rng` is consumed in a fixed order.
World step_world(World world, const std::vector<Assignment>& assignments, const StepContext& ctx,
                 double noise_sigma, std::mt19937_64& demand_rng);

// Customers of one request for one step: floor(rate') plus a Bernoulli draw on
// the remainder, with rate' = rate * (1 + sigma * N(0,1)) clipped at zero.
int realize_customers(double rate, double sigma, std::mt19937_64& rng);

enum class SimMode { Baseline, Uncoordinated, Coordinated };
const char* to_string(SimMode m);
SimMode sim_mode_from_string(const std::string& s);

using Micro = std::int64_t;  // currency in millionths
Micro to_micro(double value);
std::string format_micro(Micro value);

struct TickRecord {
  int tick = 0;
  BusSeries lmp;           // currency per MWh
  BusSeries demand;        // realized exogenous demand, MW
  BusSeries vehicle_load;  // MW
  BusSeries shed;          // MW
  int waiting = 0;
  int idle = 0;
};

struct SimReport {
  SimMode mode = SimMode::Baseline;
  int ticks = 0;
  std::uint64_t seed = 0;
  int vehicles = 0;
  int customers = 0;            // materialized
  int served = 0;
  int unserved = 0;             // still waiting at the end
  double dropped = 0.0;         // drop slack used at t = 1 across solves
  int fallbacks = 0;
  int held_back = 0;            // sampled charging tasks dropped to stay within the plan
  double avg_trip_hours = 0.0;  // wait + travel per served customer
  double energy_mwh = 0.0;      // delivered, exogenous + fleet
  double fleet_energy_mwh = 0.0;
  double shed_mwh = 0.0;
  double mean_lmp = 0.0;
  Micro grid_expenditure = 0;   // exogenous load at realized LMPs
  Micro tso_expenditure = 0;    // fleet load at realized LMPs
  Micro generation_cost = 0;
  int charge_violations = 0;
  std::vector<TickRecord> series;

  std::string to_json() const;
  // tick,bus,lmp,demand,vehicle_load,shed,waiting,idle
  std::string to_csv() const;
  std::string to_svg() const;
};

bool operator==(const TickRecord& a, const TickRecord& b);

// Runs the episode tick = 1..T. Sampled charging is held to each station's
// planned first-step load. The controller solves every
// sim.resolve_every ticks; in between, idle vehicles and new customers wait. Solver failures throw lp::SolveError after
// `partial` (if given) receives the report so far.
SimReport run_simulation(const Scenario& scenario, SimMode mode, SimReport* partial = nullptr);

}  // namespace pamod
