// Bounded-variable revised simplex.
//
// Internal form: A x + s = b with one logical s_i per row (bounds encode the row
// sense) and, during phase 1, one artificial per row whose logical could not
// start feasible. The basis is factorized with a sparse LU and updated in
// product form between refactorizations. Pricing is Dantzig with a Bland
// fallback after a run of degenerate pivots; the ratio test is Harris' two-pass.

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "pamod/lp.hpp"

namespace pamod::lp {
namespace {

enum class VarState : std::uint8_t { Basic, AtLower, AtUpper, Free, Fixed };

double round_pow2(double v) {
  if (!(v > 0.0) || !std::isfinite(v)) return 1.0;
  return std::exp2(std::round(std::log2(v)));
}

struct Eta {
  int pos;
  double pivot;
  std::vector<std::pair<int, double>> column;  // off-pivot nonzeros of alpha
};

class Simplex {
 public:
  Simplex(const LpProblem& p, const SolveOptions& opt) : opt_(opt) { build(p); }

  LpSolution run();

 private:
  void build(const LpProblem& p);
  void compute_scaling(const std::vector<Entry>& entries);

  // column access over structurals, logicals and artificials
  template <class F>
  void for_column(int j, F&& f) const {
    if (j < n_) {
      for (int k = colptr_[j]; k < colptr_[j + 1]; ++k) f(rowidx_[k], val_[k]);
    } else if (j < n_ + m_) {
      f(j - n_, 1.0);
    } else {
      const int a = j - n_ - m_;
      f(art_row_[a], art_sign_[a]);
    }
  }
  double dot_column(int j, const std::vector<double>& y) const {
    double s = 0.0;
    for_column(j, [&](int i, double v) { s += v * y[i]; });
    return s;
  }

  bool refactor();
  void recompute_basics();
  void ftran(std::vector<double>& v) const;
  void btran(std::vector<double>& w) const;
  void compute_duals(const std::vector<double>& c, std::vector<double>& y) const;

  enum class PhaseResult { Optimal, Unbounded, IterationLimit, Singular };
  PhaseResult iterate(const std::vector<double>& cost);

  void set_nonbasic_at_bound(int j);

  SolveOptions opt_;
  int m_ = 0, n_ = 0, total_ = 0;
  std::vector<int> colptr_, rowidx_;
  std::vector<double> val_;
  std::vector<double> row_scale_, col_scale_;
  double cost_scale_ = 1.0;
  std::vector<double> b_;
  std::vector<double> lb_, ub_, cost_;
  std::vector<int> art_row_;
  std::vector<double> art_sign_;

  std::vector<double> x_;
  std::vector<VarState> state_;
  std::vector<int> head_;       // basis position -> column
  std::vector<int> pos_;        // column -> basis position or -1
  mutable Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
  std::vector<Eta> etas_;
  std::int64_t iterations_ = 0;
  std::int64_t max_iterations_ = 0;
  bool bland_ = false;
  int degenerate_run_ = 0;
  double offset_ = 0.0;
};

void Simplex::compute_scaling(const std::vector<Entry>& entries) {
  row_scale_.assign(m_, 1.0);
  col_scale_.assign(n_, 1.0);
  if (!opt_.scaling || entries.empty()) return;
  // Geometric-mean equilibration, a few alternating passes, powers of two only
  // so that scaling itself introduces no rounding.
  for (int pass = 0; pass < 4; ++pass) {
    std::vector<double> rmin(m_, kInf), rmax(m_, 0.0);
    for (const auto& e : entries) {
      const double a = std::abs(e.value) * row_scale_[e.row] * col_scale_[e.col];
      rmin[e.row] = std::min(rmin[e.row], a);
      rmax[e.row] = std::max(rmax[e.row], a);
    }
    for (int i = 0; i < m_; ++i)
      if (rmax[i] > 0.0) row_scale_[i] *= round_pow2(1.0 / std::sqrt(rmin[i] * rmax[i]));
    std::vector<double> cmin(n_, kInf), cmax(n_, 0.0);
    for (const auto& e : entries) {
      const double a = std::abs(e.value) * row_scale_[e.row] * col_scale_[e.col];
      cmin[e.col] = std::min(cmin[e.col], a);
      cmax[e.col] = std::max(cmax[e.col], a);
    }
    for (int j = 0; j < n_; ++j)
      if (cmax[j] > 0.0) col_scale_[j] *= round_pow2(1.0 / std::sqrt(cmin[j] * cmax[j]));
  }
}

void Simplex::build(const LpProblem& p) {
  m_ = p.num_rows();
  n_ = p.num_cols();
  offset_ = p.objective_offset();
  const auto entries = p.entries();  // column-major
  compute_scaling(entries);

  colptr_.assign(n_ + 1, 0);
  for (const auto& e : entries) ++colptr_[e.col + 1];
  std::partial_sum(colptr_.begin(), colptr_.end(), colptr_.begin());
  rowidx_.resize(entries.size());
  val_.resize(entries.size());
  {
    std::vector<int> fill(colptr_.begin(), colptr_.end() - 1);
    for (const auto& e : entries) {
      const int k = fill[e.col]++;
      rowidx_[k] = e.row;
      val_[k] = e.value * row_scale_[e.row] * col_scale_[e.col];
    }
  }

  double cmax = 0.0;
  for (int j = 0; j < n_; ++j) cmax = std::max(cmax, std::abs(p.cost(j) * col_scale_[j]));
  cost_scale_ = cmax > 0.0 ? round_pow2(cmax) : 1.0;

  b_.resize(m_);
  for (int i = 0; i < m_; ++i) b_[i] = p.rhs(i) * row_scale_[i];

  lb_.clear();
  ub_.clear();
  cost_.clear();
  for (int j = 0; j < n_; ++j) {
    lb_.push_back(p.lower(j) / col_scale_[j]);
    ub_.push_back(p.upper(j) / col_scale_[j]);
    cost_.push_back(p.cost(j) * col_scale_[j] / cost_scale_);
  }
  for (int i = 0; i < m_; ++i) {
    switch (p.sense(i)) {
      case Sense::Equal: lb_.push_back(0.0); ub_.push_back(0.0); break;
      case Sense::LessEqual: lb_.push_back(0.0); ub_.push_back(kInf); break;
      case Sense::GreaterEqual: lb_.push_back(-kInf); ub_.push_back(0.0); break;
    }
    cost_.push_back(0.0);
  }
  total_ = n_ + m_;
}

void Simplex::set_nonbasic_at_bound(int j) {
  if (lb_[j] == ub_[j]) {
    state_[j] = VarState::Fixed;
    x_[j] = lb_[j];
  } else if (std::isfinite(lb_[j])) {
    state_[j] = VarState::AtLower;
    x_[j] = lb_[j];
  } else if (std::isfinite(ub_[j])) {
    state_[j] = VarState::AtUpper;
    x_[j] = ub_[j];
  } else {
    state_[j] = VarState::Free;
    x_[j] = 0.0;
  }
}

bool Simplex::refactor() {
  etas_.clear();
  if (m_ == 0) return true;
  std::vector<Eigen::Triplet<double>> trips;
  for (int k = 0; k < m_; ++k)
    for_column(head_[k], [&](int i, double v) { trips.emplace_back(i, k, v); });
  Eigen::SparseMatrix<double> B(m_, m_);
  B.setFromTriplets(trips.begin(), trips.end());
  B.makeCompressed();
  lu_.analyzePattern(B);
  lu_.factorize(B);
  return lu_.info() == Eigen::Success;
}

void Simplex::ftran(std::vector<double>& v) const {
  Eigen::Map<Eigen::VectorXd> rhs(v.data(), m_);
  Eigen::VectorXd sol = lu_.solve(rhs);
  rhs = sol;
  for (const auto& eta : etas_) {
    const double t = v[eta.pos] / eta.pivot;
    if (t != 0.0)
      for (const auto& [i, a] : eta.column) v[i] -= a * t;
    v[eta.pos] = t;
  }
}

void Simplex::btran(std::vector<double>& w) const {
  for (auto it = etas_.rbegin(); it != etas_.rend(); ++it) {
    double s = w[it->pos];
    for (const auto& [i, a] : it->column) s -= w[i] * a;
    w[it->pos] = s / it->pivot;
  }
  Eigen::Map<Eigen::VectorXd> rhs(w.data(), m_);
  Eigen::VectorXd sol = lu_.transpose().solve(rhs);
  rhs = sol;
}

void Simplex::compute_duals(const std::vector<double>& c, std::vector<double>& y) const {
  y.assign(m_, 0.0);
  for (int k = 0; k < m_; ++k) y[k] = c[head_[k]];
  if (m_ > 0) btran(y);
}

void Simplex::recompute_basics() {
  if (m_ == 0) return;
  std::vector<double> r(b_);
  for (int j = 0; j < total_; ++j) {
    if (state_[j] == VarState::Basic || x_[j] == 0.0) continue;
    const double xj = x_[j];
    for_column(j, [&](int i, double v) { r[i] -= v * xj; });
  }
  ftran(r);
  for (int k = 0; k < m_; ++k) x_[head_[k]] = r[k];
}

Simplex::PhaseResult Simplex::iterate(const std::vector<double>& cost) {
  const double ftol = opt_.feasibility_tol;
  const double dtol = opt_.optimality_tol;
  const double piv_tol = 1e-9;
  std::vector<double> y, alpha(m_);
  bool verified = false;
  degenerate_run_ = 0;
  bland_ = false;

  while (true) {
    if (iterations_ >= max_iterations_) return PhaseResult::IterationLimit;
    if (static_cast<int>(etas_.size()) >= opt_.refactor_interval) {
      if (!refactor()) return PhaseResult::Singular;
      recompute_basics();
    }
    compute_duals(cost, y);

    // Pricing.
    int q = -1;
    double best = 0.0;
    for (int j = 0; j < total_; ++j) {
      const VarState st = state_[j];
      if (st == VarState::Basic || st == VarState::Fixed) continue;
      const double d = cost[j] - dot_column(j, y);
      double score = 0.0;
      if (st == VarState::AtLower && d < -dtol) score = -d;
      else if (st == VarState::AtUpper && d > dtol) score = d;
      else if (st == VarState::Free && std::abs(d) > dtol) score = std::abs(d);
      if (score <= 0.0) continue;
      if (bland_) { q = j; best = score; break; }
      if (score > best) { best = score; q = j; }
    }
    if (q < 0) {
      if (verified || etas_.empty()) return PhaseResult::Optimal;
      // Confirm on a fresh factorization before declaring optimality.
      if (!refactor()) return PhaseResult::Singular;
      recompute_basics();
      verified = true;
      continue;
    }
    verified = false;

    const double dq = cost[q] - dot_column(q, y);
    const double dir = dq < 0.0 ? 1.0 : -1.0;

    std::fill(alpha.begin(), alpha.end(), 0.0);
    for_column(q, [&](int i, double v) { alpha[i] = v; });
    if (m_ > 0) ftran(alpha);

    // Harris pass 1: relaxed bound on the step.
    const double range = ub_[q] - lb_[q];
    double tmax = std::isfinite(range) ? range : kInf;
    for (int k = 0; k < m_; ++k) {
      const double delta = -dir * alpha[k];
      const int j = head_[k];
      if (delta < -piv_tol && std::isfinite(lb_[j]))
        tmax = std::min(tmax, (x_[j] - lb_[j] + ftol) / -delta);
      else if (delta > piv_tol && std::isfinite(ub_[j]))
        tmax = std::min(tmax, (ub_[j] - x_[j] + ftol) / delta);
    }
    if (!std::isfinite(tmax)) return PhaseResult::Unbounded;

    // Pass 2: among rows whose exact ratio fits, take the largest pivot
    // (Bland mode: smallest ratio, ties to the smallest column index).
    int leave = -1;
    double step = 0.0;
    double best_piv = 0.0;
    double best_ratio = kInf;
    for (int k = 0; k < m_; ++k) {
      const double delta = -dir * alpha[k];
      const int j = head_[k];
      double ratio;
      if (delta < -piv_tol && std::isfinite(lb_[j])) ratio = (x_[j] - lb_[j]) / -delta;
      else if (delta > piv_tol && std::isfinite(ub_[j])) ratio = (ub_[j] - x_[j]) / delta;
      else continue;
      ratio = std::max(ratio, 0.0);
      if (bland_) {
        if (ratio < best_ratio - 1e-12 ||
            (ratio <= best_ratio + 1e-12 && leave >= 0 && j < head_[leave])) {
          best_ratio = ratio;
          leave = k;
          step = ratio;
        }
      } else if (ratio <= tmax && std::abs(delta) > best_piv) {
        best_piv = std::abs(delta);
        leave = k;
        step = ratio;
      }
    }

    ++iterations_;
    const bool flip = std::isfinite(range) && (leave < 0 || range <= step);
    if (flip) step = range;
    if (leave < 0 && !flip) return PhaseResult::Unbounded;

    if (step * std::abs(dq) <= 1e-13) {
      if (++degenerate_run_ > opt_.stall_limit) bland_ = true;
    } else {
      degenerate_run_ = 0;
      bland_ = false;
    }

    if (step != 0.0) {
      x_[q] += dir * step;
      for (int k = 0; k < m_; ++k)
        if (alpha[k] != 0.0) x_[head_[k]] -= dir * step * alpha[k];
    }

    if (flip) {
      if (state_[q] == VarState::AtLower) { state_[q] = VarState::AtUpper; x_[q] = ub_[q]; }
      else { state_[q] = VarState::AtLower; x_[q] = lb_[q]; }
      continue;
    }

    const int out = head_[leave];
    const double delta = -dir * alpha[leave];
    if (lb_[out] == ub_[out]) {
      state_[out] = VarState::Fixed;
      x_[out] = lb_[out];
    } else if (delta < 0.0) {
      state_[out] = VarState::AtLower;
      x_[out] = lb_[out];
    } else {
      state_[out] = VarState::AtUpper;
      x_[out] = ub_[out];
    }
    pos_[out] = -1;
    head_[leave] = q;
    pos_[q] = leave;
    state_[q] = VarState::Basic;

    Eta eta{leave, alpha[leave], {}};
    for (int k = 0; k < m_; ++k)
      if (k != leave && std::abs(alpha[k]) > 1e-14) eta.column.emplace_back(k, alpha[k]);
    etas_.push_back(std::move(eta));
  }
}

LpSolution Simplex::run() {
  LpSolution sol;
  max_iterations_ = opt_.max_iterations > 0 ? opt_.max_iterations
                                            : 20000 + 50 * static_cast<std::int64_t>(m_ + n_);

  x_.assign(total_, 0.0);
  state_.assign(total_, VarState::AtLower);
  pos_.assign(total_, -1);
  head_.assign(m_, -1);
  for (int j = 0; j < n_; ++j) set_nonbasic_at_bound(j);

  // Residual after placing structurals at bounds decides, row by row, whether
  // the logical can start basic or an artificial is needed.
  std::vector<double> r(b_);
  for (int j = 0; j < n_; ++j) {
    if (x_[j] == 0.0) continue;
    const double xj = x_[j];
    for_column(j, [&](int i, double v) { r[i] -= v * xj; });
  }
  for (int i = 0; i < m_; ++i) {
    const int s = n_ + i;
    if (r[i] >= lb_[s] - 1e-12 && r[i] <= ub_[s] + 1e-12) {
      state_[s] = VarState::Basic;
      x_[s] = r[i];
      head_[i] = s;
      pos_[s] = i;
    } else {
      set_nonbasic_at_bound(s);
      const double gap = r[i] - x_[s];
      const int a = static_cast<int>(art_row_.size());
      art_row_.push_back(i);
      art_sign_.push_back(gap > 0.0 ? 1.0 : -1.0);
      lb_.push_back(0.0);
      ub_.push_back(kInf);
      cost_.push_back(0.0);
      x_.push_back(std::abs(gap));
      state_.push_back(VarState::Basic);
      pos_.push_back(i);
      head_[i] = n_ + m_ + a;
    }
  }
  total_ = static_cast<int>(x_.size());

  auto fail = [&](Status st, const std::string& msg) {
    sol.status = st;
    sol.message = msg;
    sol.iterations = iterations_;
    return sol;
  };

  if (!refactor()) return fail(Status::IterationLimit, "initial basis singular");

  if (!art_row_.empty()) {
    std::vector<double> phase1(total_, 0.0);
    for (int j = n_ + m_; j < total_; ++j) phase1[j] = 1.0;
    const auto res = iterate(phase1);
    if (res == PhaseResult::IterationLimit) return fail(Status::IterationLimit, "phase 1 iteration limit");
    if (res == PhaseResult::Singular) return fail(Status::IterationLimit, "singular basis in phase 1");
    double infeas = 0.0;
    double bscale = 1.0;
    for (double v : b_) bscale = std::max(bscale, std::abs(v));
    for (int j = n_ + m_; j < total_; ++j) infeas += x_[j];
    if (infeas > opt_.feasibility_tol * bscale) {
      sol.status = Status::Infeasible;
      sol.message = "phase 1 optimum " + std::to_string(infeas);
      sol.iterations = iterations_;
      return sol;
    }
    for (int j = n_ + m_; j < total_; ++j) {
      ub_[j] = 0.0;
      if (state_[j] != VarState::Basic) { state_[j] = VarState::Fixed; x_[j] = 0.0; }
    }
  }

  cost_.resize(total_, 0.0);
  const auto res = iterate(cost_);
  if (res == PhaseResult::IterationLimit) return fail(Status::IterationLimit, "phase 2 iteration limit");
  if (res == PhaseResult::Singular) return fail(Status::IterationLimit, "singular basis in phase 2");
  if (res == PhaseResult::Unbounded) return fail(Status::Unbounded, "unbounded ray in phase 2");

  if (!refactor()) return fail(Status::IterationLimit, "singular final basis");
  recompute_basics();
  std::vector<double> y;
  compute_duals(cost_, y);

  sol.status = Status::Optimal;
  sol.iterations = iterations_;
  sol.x.resize(n_);
  sol.reduced_costs.resize(n_);
  for (int j = 0; j < n_; ++j) {
    double xj = x_[j];
    if (state_[j] != VarState::Basic) xj = x_[j];
    sol.x[j] = xj * col_scale_[j];
    const double d = state_[j] == VarState::Basic ? 0.0 : cost_[j] - dot_column(j, y);
    sol.reduced_costs[j] = d * cost_scale_ / col_scale_[j];
  }
  sol.duals.resize(m_);
  for (int i = 0; i < m_; ++i) sol.duals[i] = y[i] * cost_scale_ * row_scale_[i];
  for (int k = 0; k < m_; ++k)
    if (head_[k] < n_ + m_) sol.basis.push_back(head_[k]);
  std::sort(sol.basis.begin(), sol.basis.end());
  return sol;
}

}  // namespace

LpSolution solve(const LpProblem& problem, const SolveOptions& options) {
  problem.validate();
  const auto t0 = std::chrono::steady_clock::now();
  LpSolution sol;
  {
    Simplex s(problem, options);
    sol = s.run();
  }
  if (sol.status == Status::IterationLimit && options.scaling) {
    // Restart once without scaling and with an earlier Bland fallback.
    SolveOptions retry = options;
    retry.scaling = false;
    retry.stall_limit = 5;
    retry.refactor_interval = std::max(8, options.refactor_interval / 4);
    Simplex s(problem, retry);
    LpSolution second = s.run();
    second.iterations += sol.iterations;
    if (second.status != Status::IterationLimit) sol = std::move(second);
    else sol.message += "; restart: " + second.message;
  }
  if (sol.optimal()) {
    const auto& c = problem.costs();
    double obj = problem.objective_offset();
    for (std::size_t j = 0; j < c.size(); ++j) obj += c[j] * sol.x[j];
    sol.objective = obj;
  }
  sol.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

}  // namespace pamod::lp
