#pragma once

// DC power network, economic dispatch and locational marginal prices.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pamod/fleet.hpp"
#include "pamod/lp.hpp"

namespace pamod {

// Time series indexed by step 1..T. A single entry is broadcast over the
// horizon; an empty series means "no limit" where that is meaningful.
using Series = std::vector<double>;
double series_at(const Series& s, int t, double fallback);

struct Line {
  int from = 0;
  int to = 0;
  double reactance = 1.0;  // p.u., > 0
  double limit = 0.0;      // MW
  bool operator==(const Line&) const = default;
};

struct Generator {
  std::string name;
  int bus = 0;
  Series pmin{0.0};
  Series pmax{0.0};
  Series cost{0.0};   // currency per MWh
  Series ramp_up;     // MW per step, empty = unlimited
  Series ramp_down;   // MW per step, empty = unlimited
  std::optional<double> initial_output;  // output before t = 1, anchors the first ramp
  bool operator==(const Generator&) const = default;
};

struct Load {
  int bus = 0;
  Series demand{0.0};  // MW
  Series cap;          // MW delivery limit, empty = none
  bool operator==(const Load&) const = default;
};

struct GridModel {
  std::vector<int> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;
  std::vector<Load> loads;
  int reference_bus = -1;       // -1 = lowest bus id
  double step_seconds = 3600.0;

  int reference() const;
  double step_hours() const { return step_seconds / 3600.0; }
  // Exogenous demand and cap at a bus (summed over loads; cap = +inf when absent).
  double demand(int bus, int t) const;
  double cap(int bus, int t) const;
  bool operator==(const GridModel&) const = default;
};

// (bus, t) -> MW
using BusSeries = std::map<std::pair<int, int>, double>;

// Throws ValidationError on disconnected networks or inconsistent data.
void validate_grid(const GridModel& grid, int T);

struct DispatchOptions {
  std::optional<double> shed_penalty;  // currency per MWh; enables load shedding
  bool enforce_ramps = true;
  // (bus, t) whose demand and cap rows are left out; delivered power there is
  // then priced by the caller through its objective coefficient.
  std::set<std::pair<int, int>> relaxed;
};

struct GridLayout {
  int T = 0;
  std::vector<int> buses;                   // sorted
  std::map<int, int> bus_pos;
  std::vector<std::vector<int>> p;          // [gen][t-1]
  std::vector<std::vector<int>> theta;      // [bus][t-1]
  std::vector<std::vector<int>> flow;       // [line][t-1]
  std::vector<std::vector<int>> delivered;  // [bus][t-1]
  std::vector<std::vector<int>> shed;       // [bus][t-1], -1 without shedding
  std::vector<std::vector<int>> balance;    // [bus][t-1] rows
  std::vector<std::vector<int>> loaddef;    // [bus][t-1] rows, -1 when relaxed
  std::vector<std::vector<int>> cap;        // [bus][t-1] rows, -1 when uncapped or relaxed
};

// Appends dispatch variables and rows. Rows "def[b,t]" read
// delivered + shed = demand + extra, so coupling terms can be added later.
GridLayout add_grid_block(lp::LpProblem& lp, const GridModel& grid, const BusSeries& extra_load, int T,
                          const DispatchOptions& options);

struct DispatchAssembly {
  lp::LpProblem problem;
  GridLayout layout;
};

DispatchAssembly assemble_dispatch(const GridModel& grid, const BusSeries& extra_load, int T,
                                   const DispatchOptions& options = {});

struct IsoSolution {
  std::vector<std::vector<double>> p;      // [gen][t-1], MW
  std::vector<std::vector<double>> theta;  // [bus][t-1]
  std::vector<std::vector<double>> flow;   // [line][t-1], MW
  BusSeries delivered;                      // MW
  BusSeries shed;                           // MW, zero without shedding
  BusSeries lmp;                            // currency per MWh
  double generation_cost = 0.0;             // C_G
  double shed_energy = 0.0;                 // MWh
};

// LMP(b,t) = balance dual + delivery-cap multiplier, converted to currency per
// MWh. Price entries for stations are LMP * J_C / 3.6e9 (per charge level).
std::pair<IsoSolution, PriceTable> extract_lmp(const lp::LpSolution& solution, const GridLayout& layout,
                                               const GridModel& grid, double level_energy,
                                               const std::map<int, int>& station_of_bus);

// Solves dispatch and returns the ISO solution; throws lp::SolveError if not optimal.
IsoSolution solve_dispatch(const GridModel& grid, const BusSeries& extra_load, int T,
                           const DispatchOptions& options = {});

// (C_G(load + eps at bus,t) - C_G(load)) / (eps * step hours), currency per MWh.
double perturbation_lmp_check(const GridModel& grid, const BusSeries& extra_load, int bus, int t, double eps,
                              int T, const DispatchOptions& options = {});

// Largest |injection - withdrawal| over (bus, t).
double power_balance_residual(const IsoSolution& iso, const GridModel& grid, int T);

}  // namespace pamod
