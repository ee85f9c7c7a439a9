#include <gtest/gtest.h>

#include <random>

#include "pamod/lp.hpp"
#include "support/vertex_oracle.hpp"

using namespace pamod::lp;

namespace {

LpProblem min_x_ge_3() {
  LpProblem p;
  const int x = p.add_variable("x", -kInf, kInf, 1.0);
  const int r = p.add_row("lb", Sense::GreaterEqual, 3.0);
  p.add_coefficient(r, x, 1.0);
  return p;
}

void expect_kkt(const LpProblem& p, const LpSolution& s) {
  const auto k = kkt_report(p, s);
  EXPECT_LE(k.primal_infeasibility, 1e-7);
  EXPECT_LE(k.dual_infeasibility, 1e-7);
  EXPECT_LE(k.complementarity, 1e-6);
  EXPECT_LE(k.duality_gap, 1e-6);
}

}  // namespace

TEST(Simplex, SingleBoundRow) {
  const auto p = min_x_ge_3();
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal()) << s.message;
  EXPECT_NEAR(s.x[0], 3.0, 1e-12);
  EXPECT_NEAR(s.duals[0], 1.0, 1e-12);
  EXPECT_NEAR(s.objective, 3.0, 1e-12);
  expect_kkt(p, s);
}

TEST(Simplex, NoRows) {
  LpProblem p;
  p.add_variable("a", 1.0, 4.0, 2.0);
  p.add_variable("b", -2.0, 5.0, -1.0);
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal());
  EXPECT_DOUBLE_EQ(s.x[0], 1.0);
  EXPECT_DOUBLE_EQ(s.x[1], 5.0);
  EXPECT_DOUBLE_EQ(s.objective, -3.0);
}

TEST(Simplex, Infeasible) {
  LpProblem p;
  const int x = p.add_variable("x", 0.0, 1.0, 1.0);
  const int r = p.add_row("r", Sense::GreaterEqual, 2.0);
  p.add_coefficient(r, x, 1.0);
  EXPECT_EQ(solve(p).status, Status::Infeasible);
}

TEST(Simplex, Unbounded) {
  LpProblem p;
  const int x = p.add_variable("x", 0.0, kInf, -1.0);
  const int y = p.add_variable("y", 0.0, kInf, 0.0);
  const int r = p.add_row("r", Sense::LessEqual, 1.0);
  p.add_coefficient(r, y, 1.0);
  p.add_coefficient(r, x, 0.0);
  EXPECT_EQ(solve(p).status, Status::Unbounded);
}

// Two buses, cheap unit behind a 30 MW line, 50 MW load at the far bus.
TEST(Simplex, TwoBusCongestionDuals) {
  LpProblem p;
  const int g1 = p.add_variable("g1", 0, 100, 10);
  const int g2 = p.add_variable("g2", 0, 100, 50);
  const int f = p.add_variable("f", -30, 30, 0);
  const int b1 = p.add_row("bal1", Sense::Equal, 0);
  const int b2 = p.add_row("bal2", Sense::Equal, 50);
  p.add_coefficient(b1, g1, 1);
  p.add_coefficient(b1, f, -1);
  p.add_coefficient(b2, g2, 1);
  p.add_coefficient(b2, f, 1);
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.x[g1], 30, 1e-9);
  EXPECT_NEAR(s.x[g2], 20, 1e-9);
  EXPECT_NEAR(s.duals[b1], 10, 1e-9);
  EXPECT_NEAR(s.duals[b2], 50, 1e-9);
  EXPECT_NEAR(s.reduced_costs[f], -40, 1e-9);
  expect_kkt(p, s);
}

TEST(Simplex, MatchesVertexEnumeration) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 150; ++trial) {
    const int n = 2 + trial % 5;
    const int m = 1 + (trial * 7) % 8;
    const auto p = oracle::random_lp(rng, n, m);
    const auto want = oracle::vertex_enumeration(p);
    const auto s = solve(p);
    ASSERT_TRUE(want.has_value());
    ASSERT_TRUE(s.optimal()) << "trial " << trial << ": " << s.message;
    EXPECT_NEAR(s.objective, *want, 1e-6 * (1 + std::abs(*want))) << "trial " << trial;
    expect_kkt(p, s);
  }
}

TEST(Simplex, LargerRandomKkt) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = oracle::random_lp(rng, 50, 50);
    const auto s = solve(p);
    ASSERT_TRUE(s.optimal()) << s.message;
    expect_kkt(p, s);
  }
}

TEST(Simplex, Deterministic) {
  std::mt19937_64 rng(3);
  const auto p = oracle::random_lp(rng, 20, 15);
  const auto a = solve(p), b = solve(p);
  EXPECT_EQ(a.status, b.status);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.duals, b.duals);
  EXPECT_EQ(a.basis, b.basis);
}

TEST(Simplex, ObjectiveScalingKeepsBasis) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = oracle::random_lp(rng, 8, 6);
    const auto a = solve(p);
    ASSERT_TRUE(a.optimal());
    for (int j = 0; j < p.num_cols(); ++j) p.set_cost(j, 4.0 * p.cost(j));
    const auto b = solve(p);
    ASSERT_TRUE(b.optimal());
    EXPECT_EQ(a.basis, b.basis);
    EXPECT_NEAR(b.objective, 4.0 * a.objective, 1e-9 * (1 + std::abs(a.objective)));
    for (int i = 0; i < p.num_rows(); ++i) EXPECT_NEAR(b.duals[i], 4.0 * a.duals[i], 1e-8);
  }
}

TEST(Simplex, DegenerateCycleProne) {
  // Beale's example, which cycles under textbook Dantzig pricing.
  LpProblem p;
  const int x1 = p.add_variable("x1", 0, kInf, -0.75);
  const int x2 = p.add_variable("x2", 0, kInf, 150);
  const int x3 = p.add_variable("x3", 0, kInf, -0.02);
  const int x4 = p.add_variable("x4", 0, kInf, 6);
  const int r1 = p.add_row("r1", Sense::LessEqual, 0);
  const int r2 = p.add_row("r2", Sense::LessEqual, 0);
  const int r3 = p.add_row("r3", Sense::LessEqual, 1);
  p.add_coefficient(r1, x1, 0.25);
  p.add_coefficient(r1, x2, -60);
  p.add_coefficient(r1, x3, -0.04);
  p.add_coefficient(r1, x4, 9);
  p.add_coefficient(r2, x1, 0.5);
  p.add_coefficient(r2, x2, -90);
  p.add_coefficient(r2, x3, -0.02);
  p.add_coefficient(r2, x4, 3);
  p.add_coefficient(r3, x3, 1);
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.objective, -0.05, 1e-9);
  expect_kkt(p, s);
}

TEST(Mps, SingleRowExample) {
  const auto text = write_mps(min_x_ge_3());
  int rows_entries = 0, rhs_entries = 0;
  std::istringstream in(text);
  std::string line, section;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] != ' ') { section = line.substr(0, line.find(' ')); continue; }
    if (section == "ROWS" && line.find("COST") == std::string::npos) ++rows_entries;
    if (section == "RHS") ++rhs_entries;
  }
  EXPECT_EQ(rows_entries, 1);
  EXPECT_EQ(rhs_entries, 1);
}

TEST(Mps, LongTagsSuffixDeterministically) {
  LpProblem p;
  p.add_variable("flow[e12,d3]", 0, 1, 1);
  p.add_variable("flow[e12,d4]", 0, 1, 1);
  p.add_variable("short", 0, 1, 1);
  p.add_row("COST", Sense::LessEqual, 1);
  const auto n = mps_names(p);
  EXPECT_EQ(n.cols[0], "flow[e#0");
  EXPECT_EQ(n.cols[1], "flow[e#1");
  EXPECT_EQ(n.cols[2], "short");
  EXPECT_EQ(n.rows[0], "COST#0");
  EXPECT_EQ(mps_names(p).cols, n.cols);
}

TEST(Mps, SanitizedCollisionsAreSuffixed) {
  LpProblem p;
  p.add_variable("a b", 0, 1, 0);
  p.add_variable("a_b", 0, 1, 0);
  const auto n = mps_names(p);
  EXPECT_NE(n.cols[0], n.cols[1]);
  EXPECT_LE(n.cols[0].size(), 8u);
}

TEST(Mps, RoundTripPreservesOptimum) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = oracle::random_lp(rng, 10, 8);
    p.set_objective_offset(2.5);
    const auto q = read_mps(write_mps(p));
    ASSERT_EQ(q.num_rows(), p.num_rows());
    ASSERT_EQ(q.num_cols(), p.num_cols());
    const auto a = solve(p), b = solve(q);
    ASSERT_EQ(a.status, b.status);
    EXPECT_NEAR(a.objective, b.objective, 1e-9 * (1 + std::abs(a.objective)));
  }
}

TEST(SolutionFile, RoundTrip) {
  std::mt19937_64 rng(23);
  const auto p = oracle::random_lp(rng, 6, 5);
  const auto s = solve(p);
  const auto r = read_solution_file(write_solution_file(s, p), p);
  EXPECT_EQ(r.status, s.status);
  EXPECT_EQ(r.x, s.x);
  EXPECT_EQ(r.duals, s.duals);
  EXPECT_EQ(r.reduced_costs, s.reduced_costs);
  EXPECT_EQ(r.objective, s.objective);
}

TEST(SolutionFile, ErrorsCarryLineNumbers) {
  const auto p = min_x_ge_3();
  try {
    read_solution_file("STATUS Optimal\n# note\nCOLUMN nope 1\n", p);
    FAIL();
  } catch (const pamod::ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(read_solution_file("COLUMN x 1\n", p), pamod::ParseError);
  EXPECT_THROW(read_solution_file("STATUS Done\n", p), pamod::ParseError);
}

TEST(SolutionFile, DerivesReducedCostsWhenAbsent) {
  const auto p = min_x_ge_3();
  const auto s = read_solution_file("STATUS Optimal\nCOLUMN x 3\nROW lb 1\n", p);
  EXPECT_DOUBLE_EQ(s.objective, 3.0);
  EXPECT_DOUBLE_EQ(s.reduced_costs[0], 0.0);
}

TEST(Problem, RejectsBadInput) {
  LpProblem p;
  p.add_variable("x", 0, 1, 0);
  EXPECT_THROW(p.add_variable("x", 0, 1, 0), pamod::ValidationError);
  p.set_bounds(0, 2, 1);
  EXPECT_THROW(p.validate(), pamod::ValidationError);
  EXPECT_THROW(p.row_index("missing"), pamod::ValidationError);
}
