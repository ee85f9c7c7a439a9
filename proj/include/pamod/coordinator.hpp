#pragma once

// Price-based negotiation between the fleet operator (TSO) and the grid
// operator (ISO). The agents only exchange charging schedules and prices.

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pamod/joint.hpp"

namespace pamod {

using BusTime = std::pair<int, int>;

struct ScheduleMsg {
  int k = 0;
  BusSeries load;  // MW of vehicle load per coupled (bus, t), negative = injection
};

struct PriceMsg {
  int k = 0;
  BusSeries price;  // currency per MWh per coupled (bus, t)
  bool terminate = false;
};

// Wire encoding. Decoding validates the exact field set and throws SchemaError.
std::string encode(const ScheduleMsg& m);
std::string encode(const PriceMsg& m);
ScheduleMsg decode_schedule(const std::string& frame);
PriceMsg decode_price(const std::string& frame);
// "schedule" or "price"; throws SchemaError on anything else.
std::string frame_type(const std::string& frame);

struct NegotiationOptions {
  int max_iter = 500;
  double tol = 1e-3;           // MW, infinity norm of the coupled residual
  int patience = 3;            // consecutive iterations below tol
  double alpha0 = 0.0;         // 0 = price_scale / (first residual norm)
  double price_scale = 0.0;    // currency per MWh; 0 = spread of generator costs
  bool constant_step = false;  // alpha_k = alpha0 instead of alpha0 / sqrt(k)
  // Relative slack on the ISO's Lagrangian cost within which it delivers the
  // dispatch closest to the proposed load.
  double tie_tolerance = 1e-6;
  int window = 10;             // schedules averaged for primal recovery
  bool warm_start = true;      // start from the dispatch duals, else from zero prices
  std::optional<double> shed_penalty = 6000.0;  // used by the final re-dispatch
};

struct NegotiationState {
  int k = 0;
  BusSeries lambda;        // balance multipliers, currency per MWh
  BusSeries mu;            // delivery-cap multipliers, >= 0
  double alpha = 0.0;      // last step size
  double alpha0 = 0.0;
  std::vector<double> residuals;  // per iteration, MW
  double best_social_cost = 0.0;
  std::vector<std::string> log;   // frames in wire order
};

class TsoAgent {
 public:
  TsoAgent(ExpandedGraph graph, std::vector<TripRequest> requests, FleetSpec fleet, CouplingMap map,
           double step_seconds, int window = 10, double tie_tolerance = 1e-6);

  // Solves the priced routing problem, or answers the first terminating price
  // with the averaged schedule of the last `window` solves. Returns nothing
  // once the final price has arrived.
  std::optional<ScheduleMsg> respond(const PriceMsg& price);
  bool finished() const { return finished_; }
  const PriceMsg& final_price() const { return final_price_; }
  const std::vector<BusTime>& coupled() const { return coupled_; }
  // Averaged plan sent after termination (valid once respond saw terminate).
  const TsoSolution& recovered() const { return recovered_; }
  const TsoSolution& last() const { return history_.back(); }
  PriceTable level_prices(const PriceMsg& price) const;
  const ExpandedGraph& graph() const { return graph_; }
  const FleetSpec& fleet() const { return fleet_; }

 private:
  ExpandedGraph graph_;
  std::vector<TripRequest> requests_;
  FleetSpec fleet_;
  CouplingMap map_;
  double step_seconds_;
  int window_;
  double tie_tolerance_;
  std::vector<BusTime> coupled_;
  BusSeries last_load_;
  std::deque<TsoSolution> history_;
  TsoSolution recovered_;
  int expected_k_ = 0;
  bool recovering_ = false;
  bool finished_ = false;
  PriceMsg final_price_;
};

class IsoAgent {
 public:
  IsoAgent(GridModel grid, std::vector<BusTime> coupled, int T, NegotiationOptions options);

  PriceMsg open();
  PriceMsg respond(const ScheduleMsg& schedule);
  bool finished() const { return finished_; }
  const NegotiationState& state() const { return state_; }
  bool converged() const { return converged_; }
  // Dispatch re-solved on the recovered schedule.
  const IsoSolution& final_dispatch() const { return final_; }
  const GridModel& grid() const { return grid_; }
  const NegotiationOptions& options() const { return opt_; }

 private:
  BusSeries subproblem(const BusSeries& target) const;
  PriceMsg price_msg(int k, bool terminate) const;

  GridModel grid_;
  std::vector<BusTime> coupled_;
  int T_;
  NegotiationOptions opt_;
  NegotiationState state_;
  int below_tol_ = 0;
  bool terminating_ = false;
  bool finished_ = false;
  bool converged_ = false;
  IsoSolution final_;
};

// Coupled (bus, t) pairs: every mapped bus at every step.
std::vector<BusTime> coupled_set(const CouplingMap& map, int T);

struct NegotiationResult {
  bool converged = false;
  int iterations = 0;
  TsoSolution tso;     // recovered fleet plan
  IsoSolution iso;     // final dispatch
  BusSeries prices;    // final prices at coupled (bus, t), currency per MWh
  double social_cost = 0.0;  // fleet operating cost + C_G + shed cost
  NegotiationState state;
  std::vector<std::string> transcript;
};

// In-process run. Messages still go through encode/decode.
NegotiationResult run_negotiation(TsoAgent& tso, IsoAgent& iso);

// Endpoint "host:port" (or ":port" / "port" when listening).
struct Endpoint {
  std::string host = "127.0.0.1";
  int port = 0;
  static Endpoint parse(const std::string& text);
};

struct TransportOptions {
  int retries = 20;          // connection attempts
  int retry_delay_ms = 50;   // doubled per attempt, capped at 1 s
  int timeout_ms = 60000;    // per frame
};

enum class Role { Tso, Iso };

// Listens on `endpoint`, accepts one peer and runs `role`'s side of the
// protocol. Returns the frames exchanged, in order. On transport failure
// throws TransportError; `partial` then holds the frames seen so far.
// `on_listen` receives the bound port (useful with port 0).
std::vector<std::string> serve_agent(Role role, TsoAgent* tso, IsoAgent* iso, const Endpoint& endpoint,
                                     const TransportOptions& options = {},
                                     std::vector<std::string>* partial = nullptr,
                                     const std::function<void(int)>& on_listen = {});

// Connects to a listening peer and runs `role`'s side.
std::vector<std::string> connect_agent(Role role, TsoAgent* tso, IsoAgent* iso, const Endpoint& endpoint,
                                       const TransportOptions& options = {},
                                       std::vector<std::string>* partial = nullptr);

// Social cost of a finished negotiation: recovered fleet operating cost plus
// the final dispatch cost including shedding.
double negotiated_social_cost(const TsoAgent& tso, const IsoAgent& iso);

std::string transcript_jsonl(const std::vector<std::string>& frames);
std::vector<std::string> parse_transcript(const std::string& jsonl);

struct ReplayReport {
  std::size_t frames = 0;
  std::vector<std::string> mismatches;  // "frame i: ..."
  bool ok() const { return mismatches.empty(); }
};

// Feeds the recorded frames to fresh agents and checks every produced frame
// against the recording (values within 1e-9).
ReplayReport replay_transcript(TsoAgent& tso, IsoAgent& iso, const std::vector<std::string>& frames);

}  // namespace pamod
