#pragma once

// Sparse linear programs, the built-in simplex solver and the MPS exchange
// surface used to cross-check against external solvers.

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pamod/error.hpp"

namespace pamod::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { Equal, LessEqual, GreaterEqual };

enum class Status { Optimal, Infeasible, Unbounded, IterationLimit };

const char* to_string(Status s);
Status status_from_string(std::string_view s);

struct Entry {
  int row;
  int col;
  double value;
};

// min c'x + offset  s.t.  a_i'x (=|<=|>=) b_i,  l <= x <= u.
//
// Every row and column carries a unique string tag so that assemblers can
// address duals by name ("bal[b2,t3]") instead of by position.
class LpProblem {
 public:
  int add_variable(std::string tag, double lower, double upper, double cost);
  int add_row(std::string tag, Sense sense, double rhs);
  // Accumulates into (row, col); repeated calls add up.
  void add_coefficient(int row, int col, double value);

  void set_cost(int col, double cost) { cost_.at(col) = cost; }
  void add_cost(int col, double cost) { cost_.at(col) += cost; }
  void set_bounds(int col, double lower, double upper);
  void set_rhs(int row, double rhs) { rhs_.at(row) = rhs; }
  void set_objective_offset(double offset) { offset_ = offset; }

  int num_rows() const { return static_cast<int>(row_tags_.size()); }
  int num_cols() const { return static_cast<int>(col_tags_.size()); }
  const std::string& row_tag(int i) const { return row_tags_.at(i); }
  const std::string& col_tag(int j) const { return col_tags_.at(j); }
  Sense sense(int i) const { return sense_.at(i); }
  double rhs(int i) const { return rhs_.at(i); }
  double lower(int j) const { return lower_.at(j); }
  double upper(int j) const { return upper_.at(j); }
  double cost(int j) const { return cost_.at(j); }
  double objective_offset() const { return offset_; }
  const std::vector<double>& costs() const { return cost_; }

  // Coefficients merged by (row, col), zeros dropped, sorted column-major.
  std::vector<Entry> entries() const;
  std::size_t num_entries() const { return entries_.size(); }

  bool has_row(std::string_view tag) const;
  bool has_col(std::string_view tag) const;
  // Throw ValidationError for unknown tags.
  int row_index(std::string_view tag) const;
  int col_index(std::string_view tag) const;

  // Throws ValidationError if dimensions or values are inconsistent.
  void validate() const;

  // c'x + offset for an arbitrary point.
  double evaluate(const std::vector<double>& x) const;

 private:
  std::vector<std::string> row_tags_, col_tags_;
  std::vector<Sense> sense_;
  std::vector<double> rhs_;
  std::vector<double> lower_, upper_, cost_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> row_lookup_, col_lookup_;
  double offset_ = 0.0;
};

struct LpSolution {
  Status status = Status::IterationLimit;
  std::vector<double> x;              // primal, one per column
  std::vector<double> duals;          // d(objective)/d(rhs), one per row
  std::vector<double> reduced_costs;  // c - A'y, one per column
  double objective = 0.0;
  std::int64_t iterations = 0;
  double solve_seconds = 0.0;
  // Sorted indices of basic columns (structural j -> j, logical of row i -> n+i).
  std::vector<int> basis;
  std::string message;

  bool optimal() const { return status == Status::Optimal; }
};

struct SolveOptions {
  std::int64_t max_iterations = 0;  // 0 = automatic (scales with problem size)
  double feasibility_tol = 1e-7;
  double optimality_tol = 1e-9;
  int refactor_interval = 64;
  bool scaling = true;
  // Consecutive degenerate pivots before falling back to Bland's rule.
  int stall_limit = 50;
};

LpSolution solve(const LpProblem& problem, const SolveOptions& options = {});

// Residuals of the KKT system at a reported solution, all in unscaled units.
struct KktReport {
  double primal_infeasibility = 0.0;  // max violation of rows/bounds, / (1 + |rhs|)
  double dual_infeasibility = 0.0;    // max wrong-signed reduced cost or row dual
  double complementarity = 0.0;       // max |dual * slack| / (1 + |objective|)
  double duality_gap = 0.0;           // |primal - dual objective| / (1 + |primal|)
};

KktReport kkt_report(const LpProblem& problem, const LpSolution& solution);

// Thrown by consumers that need an optimal solution but received something else.
class SolveError : public Error {
 public:
  SolveError(Status status, const std::string& what)
      : Error(std::string(to_string(status)) + ": " + what), status_(status) {}
  Status status() const { return status_; }

 private:
  Status status_;
};

// --- MPS exchange -----------------------------------------------------------

// Eight-character names used in MPS output, derived deterministically from tags.
struct MpsNames {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
};

MpsNames mps_names(const LpProblem& problem);

// Fixed-format MPS text. The objective row is named COST.
std::string write_mps(const LpProblem& problem);

// Parses fixed- or free-format MPS produced by write_mps (and most external
// writers that do not use RANGES). Tags become the MPS names.
LpProblem read_mps(std::string_view text);

// Parses the plain-text solution format documented in docs/formats.md and maps
// names back to indices through mps_names(problem).
LpSolution read_solution_file(std::string_view text, const LpProblem& problem);

// Inverse of read_solution_file; used to hand solutions to external tooling.
std::string write_solution_file(const LpSolution& solution, const LpProblem& problem);

}  // namespace pamod::lp
