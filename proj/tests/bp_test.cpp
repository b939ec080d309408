#include <cmath>

#include <gtest/gtest.h>

#include "bpgat/bp.hpp"
#include "bpgat/cnf.hpp"
#include "bpgat/errors.hpp"
#include "bpgat/exact_count.hpp"
#include "bpgat/factor_graph.hpp"
#include "test_util.hpp"

using namespace bpgat;

namespace {

FactorGraph graph(const char* dimacs) { return FactorGraph::from_cnf(parse_dimacs(dimacs)); }

void expect_normalized(const std::vector<double>& rows) {
  for (std::size_t r = 0; r < rows.size(); r += 2) {
    EXPECT_NEAR(log_sum_exp2(rows[r], rows[r + 1]), 0.0, 1e-9);
    EXPECT_TRUE(std::isfinite(rows[r]) && std::isfinite(rows[r + 1]));
  }
}

double max_abs_diff(const MessageState& a, const MessageState& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.v2f.size(); ++i) d = std::max(d, std::abs(a.v2f[i] - b.v2f[i]));
  for (std::size_t i = 0; i < a.f2v.size(); ++i) d = std::max(d, std::abs(a.f2v[i] - b.f2v[i]));
  return d;
}

BpOptions converge_opts() {
  BpOptions o;
  o.max_iters = 500;
  o.damping = 0.5;
  o.convergence_tol = 1e-13;
  return o;
}

}  // namespace

TEST(InitMessages, UniformAndDeterministic) {
  auto fg = graph("p cnf 3 2\n1 2 0\n-2 3 0\n");
  auto s = init_messages(fg);
  ASSERT_EQ(s.v2f.size(), 2 * fg.n_edges());
  for (double v : s.v2f) EXPECT_DOUBLE_EQ(v, -std::log(2.0));
  for (double v : s.f2v) EXPECT_DOUBLE_EQ(v, -std::log(2.0));
  EXPECT_EQ(s.iteration, 0);
  expect_normalized(s.v2f);
  auto t = init_messages(fg);
  EXPECT_EQ(s.v2f, t.v2f);
  EXPECT_EQ(s.f2v, t.f2v);
}

TEST(BpStep, UnitClauseMessage) {
  auto fg = graph("p cnf 1 1\n-1 0\n");
  auto s = bp_step(fg, init_messages(fg));
  EXPECT_NEAR(s.f2v[0], 0.0, 1e-12);
  EXPECT_NEAR(s.f2v[1], kNegSentinel, 1e-12);
  EXPECT_EQ(s.iteration, 1);
}

TEST(BpStep, SingleClauseKeepsVariableMessagesUniform) {
  auto fg = graph("p cnf 2 1\n1 2 0\n");
  auto s = bp_step(fg, init_messages(fg));
  for (double v : s.v2f) EXPECT_NEAR(v, -std::log(2.0), 1e-12);
  // f2v to x1 given uniform x2: (1/2, 1) unnormalised -> (1/3, 2/3).
  EXPECT_NEAR(s.f2v[0], std::log(1.0 / 3.0), 1e-12);
  EXPECT_NEAR(s.f2v[1], std::log(2.0 / 3.0), 1e-12);
}

TEST(BpStep, ChainConvergesWithinFourSteps) {
  auto fg = graph("p cnf 3 2\n1 2 0\n2 3 0\n");
  auto s = init_messages(fg);
  double delta = 1.0;
  for (int i = 0; i < 4; ++i) {
    auto next = bp_step(fg, s);
    delta = max_abs_diff(s, next);
    s = next;
  }
  EXPECT_LT(delta, 1e-8);
}

TEST(BpStep, PreservesNormalization) {
  Rng rng(41);
  for (int i = 0; i < 20; ++i) {
    auto fg = FactorGraph::from_cnf(normalize(bpgat::testing::random_formula(rng, 15, 30, 6)));
    auto s = init_messages(fg);
    for (int t = 0; t < 5; ++t) {
      s = damp(s, bp_step(fg, s), 0.5);
      expect_normalized(s.v2f);
      expect_normalized(s.f2v);
    }
  }
}

TEST(Damp, Endpoints) {
  auto fg = graph("p cnf 3 3\n1 2 0\n2 3 0\n-3 1 0\n");
  auto prev = init_messages(fg);
  prev = damp(prev, bp_step(fg, prev), 0.5);
  auto next = bp_step(fg, prev);
  auto one = damp(prev, next, 1.0);
  auto zero = damp(prev, next, 0.0);
  EXPECT_LT(max_abs_diff(one, next), 1e-15);
  EXPECT_LT(max_abs_diff(zero, prev), 1e-15);
}

TEST(Damp, HalfwayArithmetic) {
  MessageState prev, next;
  prev.v2f = {0.0, -2.0};
  next.v2f = {-2.0, 0.0};
  prev.f2v = next.f2v = {-std::log(2.0), -std::log(2.0)};
  auto d = damp(prev, next, 0.5);
  EXPECT_NEAR(d.v2f[0], -std::log(2.0), 1e-12);
  EXPECT_NEAR(d.v2f[1], -std::log(2.0), 1e-12);
}

TEST(Damp, ShapeMismatch) {
  MessageState a, b;
  a.v2f = {0, 0};
  a.f2v = {0, 0};
  b.v2f = {0, 0, 0, 0};
  b.f2v = {0, 0};
  EXPECT_THROW(damp(a, b, 0.5), ShapeError);
}

TEST(Beliefs, UniformMessages) {
  auto fg = graph("p cnf 3 1\n1 2 0\n");
  auto vb = variable_beliefs(fg, init_messages(fg));
  for (auto b : vb) {
    EXPECT_NEAR(b[0], 0.5, 1e-12);
    EXPECT_NEAR(b[1], 0.5, 1e-12);
  }
  auto fb = factor_beliefs(fg, init_messages(fg));
  EXPECT_LT(fb[0][0], 1e-30);
  for (int a = 1; a < 4; ++a) EXPECT_NEAR(fb[0][a], 1.0 / 3.0, 1e-12);
}

TEST(Beliefs, ConvergedSingleClauseMarginals) {
  auto fg = graph("p cnf 2 1\n1 2 0\n");
  auto est = estimate_ln_count(fg, converge_opts());
  auto vb = variable_beliefs(fg, est.final_state);
  EXPECT_NEAR(vb[0][0], 1.0 / 3.0, 1e-9);
  EXPECT_NEAR(vb[0][1], 2.0 / 3.0, 1e-9);
}

TEST(Beliefs, AlwaysNormalized) {
  Rng rng(42);
  for (int i = 0; i < 20;) {
    // Only satisfiable formulae: on UNSAT ones the falsifying entries carry real mass.
    auto f = normalize(bpgat::testing::random_formula(rng, 12, 20, 5));
    if (!is_satisfiable(f)) continue;
    ++i;
    auto fg = FactorGraph::from_cnf(f);
    auto s = init_messages(fg);
    for (int t = 0; t < 3; ++t) s = damp(s, bp_step(fg, s), 0.5);
    for (auto b : variable_beliefs(fg, s)) EXPECT_NEAR(b[0] + b[1], 1.0, 1e-9);
    auto fb = factor_beliefs(fg, s);
    for (std::size_t j = 0; j < fb.size(); ++j) {
      double sum = 0.0;
      for (double v : fb[j]) sum += v;
      EXPECT_NEAR(sum, 1.0, 1e-9);
      EXPECT_LT(fb[j][static_cast<std::size_t>(fg.factor(j).falsifying)], 1e-30);
    }
  }
}

TEST(BetheFreeEnergy, FreeVariable) {
  auto fg = graph("p cnf 1 0\n");
  auto s = init_messages(fg);
  auto summary = bethe_free_energy(fg, variable_beliefs(fg, s), factor_beliefs(fg, s));
  EXPECT_NEAR(summary.U, 0.0, 1e-12);
  EXPECT_NEAR(summary.H, std::log(2.0), 1e-12);
  EXPECT_NEAR(summary.F, -std::log(2.0), 1e-12);
  EXPECT_EQ(summary.F, summary.U - summary.H);
}

TEST(EstimateLnCount, SmallTrees) {
  EXPECT_NEAR(estimate_ln_count(graph("p cnf 2 1\n1 2 0\n"), converge_opts()).ln_z, std::log(3.0), 1e-6);
  auto chain = estimate_ln_count(graph("p cnf 3 2\n1 2 0\n2 3 0\n"), converge_opts());
  EXPECT_TRUE(chain.converged);
  EXPECT_NEAR(chain.ln_z, std::log(5.0), 1e-6);
}

TEST(EstimateLnCount, TreeExactness) {
  Rng rng(43);
  for (int i = 0; i < 100; ++i) {
    auto f = normalize(bpgat::testing::random_tree_formula(rng, static_cast<std::uint32_t>(rng.uniform_int(2, 14)), 4));
    auto fg = FactorGraph::from_cnf(f);
    ASSERT_TRUE(is_tree(fg));
    auto est = estimate_ln_count(fg, converge_opts());
    ASSERT_TRUE(est.converged);
    EXPECT_NEAR(est.ln_z, partition_bruteforce(fg), 1e-6);
  }
}

TEST(EstimateLnCount, LoopyTriangleWithinOneNat) {
  auto fg = graph("p cnf 3 3\n1 2 0\n2 3 0\n3 1 0\n");
  auto est = estimate_ln_count(fg, converge_opts());
  EXPECT_TRUE(std::isfinite(est.ln_z));
  EXPECT_NEAR(est.ln_z, std::log(4.0), 1.0);
}

TEST(EstimateLnCount, RecordsOneTripletPerIterationAndIsDeterministic) {
  Rng rng(44);
  auto fg = FactorGraph::from_cnf(normalize(bpgat::testing::random_formula(rng, 15, 30, 6)));
  BpOptions o;
  o.convergence_tol = 0.0;
  auto a = estimate_ln_count(fg, o);
  auto b = estimate_ln_count(fg, o);
  EXPECT_EQ(a.iterations, 5);
  EXPECT_EQ(a.summary.per_iteration.size(), 5u);
  EXPECT_EQ(a.ln_z, b.ln_z);
  EXPECT_NEAR(a.summary.per_iteration.back().neg_free_energy(), a.ln_z, 1e-12);
  EXPECT_EQ(a.summary.F, a.summary.U - a.summary.H);
}

TEST(EstimateLnCount, FullDampingMatchesRawUpdates) {
  Rng rng(45);
  auto fg = FactorGraph::from_cnf(normalize(bpgat::testing::random_formula(rng, 10, 15, 4)));
  BpOptions o;
  o.damping = 1.0;
  o.max_iters = 3;
  o.convergence_tol = 0.0;
  auto s = init_messages(fg);
  for (int i = 0; i < 3; ++i) s = bp_step(fg, s);
  auto est = estimate_ln_count(fg, o);
  EXPECT_LT(max_abs_diff(est.final_state, s), 1e-14);
}

TEST(BpOptions, Validation) {
  BpOptions o;
  o.max_iters = 0;
  EXPECT_THROW(o.validate(), InvalidArgument);
  o.max_iters = 1;
  o.damping = 1.5;
  EXPECT_THROW(o.validate(), InvalidArgument);
}
