#include <algorithm>
#include <cmath>
#include <map>

#include "pamod/lp.hpp"

namespace pamod::lp {

const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "Optimal";
    case Status::Infeasible: return "Infeasible";
    case Status::Unbounded: return "Unbounded";
    case Status::IterationLimit: return "IterationLimit";
  }
  return "?";
}

Status status_from_string(std::string_view s) {
  if (s == "Optimal") return Status::Optimal;
  if (s == "Infeasible") return Status::Infeasible;
  if (s == "Unbounded") return Status::Unbounded;
  if (s == "IterationLimit") return Status::IterationLimit;
  throw ParseError("unknown solver status '" + std::string(s) + "'", 0);
}

int LpProblem::add_variable(std::string tag, double lower, double upper, double cost) {
  const int j = num_cols();
  auto [it, inserted] = col_lookup_.emplace(tag, j);
  if (!inserted) throw ValidationError("duplicate column tag '" + tag + "'");
  col_tags_.push_back(std::move(tag));
  lower_.push_back(lower);
  upper_.push_back(upper);
  cost_.push_back(cost);
  return j;
}

int LpProblem::add_row(std::string tag, Sense sense, double rhs) {
  const int i = num_rows();
  auto [it, inserted] = row_lookup_.emplace(tag, i);
  if (!inserted) throw ValidationError("duplicate row tag '" + tag + "'");
  row_tags_.push_back(std::move(tag));
  sense_.push_back(sense);
  rhs_.push_back(rhs);
  return i;
}

void LpProblem::add_coefficient(int row, int col, double value) {
  if (row < 0 || row >= num_rows() || col < 0 || col >= num_cols())
    throw ValidationError("coefficient index out of range");
  if (value != 0.0) entries_.push_back({row, col, value});
}

void LpProblem::set_bounds(int col, double lower, double upper) {
  lower_.at(col) = lower;
  upper_.at(col) = upper;
}

std::vector<Entry> LpProblem::entries() const {
  std::map<std::pair<int, int>, double> merged;
  for (const auto& e : entries_) merged[{e.col, e.row}] += e.value;
  std::vector<Entry> out;
  out.reserve(merged.size());
  for (const auto& [key, v] : merged)
    if (v != 0.0) out.push_back({key.second, key.first, v});
  return out;
}

bool LpProblem::has_row(std::string_view tag) const {
  return row_lookup_.count(std::string(tag)) > 0;
}

bool LpProblem::has_col(std::string_view tag) const {
  return col_lookup_.count(std::string(tag)) > 0;
}

int LpProblem::row_index(std::string_view tag) const {
  auto it = row_lookup_.find(std::string(tag));
  if (it == row_lookup_.end()) throw ValidationError("unknown row tag '" + std::string(tag) + "'");
  return it->second;
}

int LpProblem::col_index(std::string_view tag) const {
  auto it = col_lookup_.find(std::string(tag));
  if (it == col_lookup_.end())
    throw ValidationError("unknown column tag '" + std::string(tag) + "'");
  return it->second;
}

void LpProblem::validate() const {
  for (int j = 0; j < num_cols(); ++j) {
    if (std::isnan(lower_[j]) || std::isnan(upper_[j]) || lower_[j] > upper_[j])
      throw ValidationError("column '" + col_tags_[j] + "' has inconsistent bounds");
    if (lower_[j] == kInf || upper_[j] == -kInf)
      throw ValidationError("column '" + col_tags_[j] + "' has an infinite fixed bound");
    if (!std::isfinite(cost_[j]))
      throw ValidationError("column '" + col_tags_[j] + "' has a non-finite cost");
  }
  for (int i = 0; i < num_rows(); ++i)
    if (!std::isfinite(rhs_[i]))
      throw ValidationError("row '" + row_tags_[i] + "' has a non-finite rhs");
  for (const auto& e : entries_)
    if (!std::isfinite(e.value)) throw ValidationError("non-finite matrix coefficient");
  if (!std::isfinite(offset_)) throw ValidationError("non-finite objective offset");
}

double LpProblem::evaluate(const std::vector<double>& x) const {
  double v = offset_;
  for (int j = 0; j < num_cols(); ++j) v += cost_[j] * x.at(j);
  return v;
}

KktReport kkt_report(const LpProblem& p, const LpSolution& s) {
  KktReport r;
  const int m = p.num_rows();
  const int n = p.num_cols();
  if (static_cast<int>(s.x.size()) != n || static_cast<int>(s.duals.size()) != m)
    throw ValidationError("solution dimensions do not match problem");

  std::vector<double> activity(m, 0.0);
  std::vector<double> reduced(p.costs());
  for (const auto& e : p.entries()) {
    activity[e.row] += e.value * s.x[e.col];
    reduced[e.col] -= e.value * s.duals[e.row];
  }
  const double obj_scale = 1.0 + std::abs(s.objective);

  double dual_obj = p.objective_offset();
  for (int i = 0; i < m; ++i) {
    const double slack = p.rhs(i) - activity[i];
    const double scale = 1.0 + std::abs(p.rhs(i));
    double viol = 0.0;
    switch (p.sense(i)) {
      case Sense::Equal: viol = std::abs(slack); break;
      case Sense::LessEqual:
        viol = std::max(0.0, -slack);
        r.dual_infeasibility = std::max(r.dual_infeasibility, s.duals[i]);
        break;
      case Sense::GreaterEqual:
        viol = std::max(0.0, slack);
        r.dual_infeasibility = std::max(r.dual_infeasibility, -s.duals[i]);
        break;
    }
    r.primal_infeasibility = std::max(r.primal_infeasibility, viol / scale);
    if (p.sense(i) != Sense::Equal)
      r.complementarity = std::max(r.complementarity, std::abs(s.duals[i] * slack) / obj_scale);
    dual_obj += p.rhs(i) * s.duals[i];
  }

  for (int j = 0; j < n; ++j) {
    const double x = s.x[j], lo = p.lower(j), up = p.upper(j), d = reduced[j];
    const double scale = 1.0 + std::max(std::isfinite(lo) ? std::abs(lo) : 0.0,
                                        std::isfinite(up) ? std::abs(up) : 0.0);
    const double viol = std::max({0.0, lo - x, x - up});
    r.primal_infeasibility = std::max(r.primal_infeasibility, viol / scale);
    // d > 0 must sit at a finite lower bound, d < 0 at a finite upper bound.
    double wrong = 0.0;
    if (d > 0.0 && !std::isfinite(lo)) wrong = d;
    if (d < 0.0 && !std::isfinite(up)) wrong = -d;
    r.dual_infeasibility = std::max(r.dual_infeasibility, wrong);
    double gap_to_bound = 0.0;
    if (d > 0.0 && std::isfinite(lo)) gap_to_bound = x - lo;
    if (d < 0.0 && std::isfinite(up)) gap_to_bound = up - x;
    r.complementarity = std::max(r.complementarity, std::abs(d * gap_to_bound) / obj_scale);
    if (d > 0.0 && std::isfinite(lo)) dual_obj += d * lo;
    if (d < 0.0 && std::isfinite(up)) dual_obj += d * up;
  }
  r.duality_gap = std::abs(s.objective - dual_obj) / obj_scale;
  return r;
}

}  // namespace pamod::lp
