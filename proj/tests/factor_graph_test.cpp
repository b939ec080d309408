#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "bpgat/cnf.hpp"
#include "bpgat/errors.hpp"
#include "bpgat/exact_count.hpp"
#include "bpgat/factor_graph.hpp"
#include "test_util.hpp"

using namespace bpgat;
using bpgat::testing::random_formula;
using bpgat::testing::relabel;

namespace {

FactorGraph graph(const char* dimacs) { return FactorGraph::from_cnf(parse_dimacs(dimacs)); }

}  // namespace

TEST(FromCnf, TwoLiteralClause) {
  auto fg = graph("p cnf 2 1\n1 2 0\n");
  ASSERT_EQ(fg.n_factors(), 1u);
  const auto& f = fg.factor(0);
  EXPECT_EQ(f.var_ids, (std::vector<std::uint32_t>{0, 1}));
  EXPECT_EQ(f.log_table, (std::vector<double>{kNegSentinel, 0.0, 0.0, 0.0}));
  EXPECT_EQ(f.falsifying, 0);
}

TEST(FromCnf, NegatedUnitClause) {
  auto fg = graph("p cnf 1 1\n-1 0\n");
  EXPECT_EQ(fg.factor(0).log_table, (std::vector<double>{0.0, kNegSentinel}));
}

TEST(FromCnf, FalsifyingAssignmentHasEveryLiteralFalse) {
  auto fg = graph("p cnf 3 1\n1 -2 3 0\n");
  const auto& t = fg.factor(0).log_table;
  // (x1, x2, x3) = (0, 1, 0) is index 0b010.
  for (std::size_t a = 0; a < t.size(); ++a) EXPECT_EQ(t[a], a == 2 ? kNegSentinel : 0.0) << a;
  EXPECT_EQ(fg.factor(0).falsifying, 2);
}

TEST(FromCnf, RejectsEmptyClause) { EXPECT_THROW(graph("p cnf 2 1\n0\n"), InvalidArgument); }

TEST(FromCnf, DegreesAndEdgesAreConsistent) {
  Rng rng(31);
  for (int i = 0; i < 50; ++i) {
    auto fg = FactorGraph::from_cnf(normalize(random_formula(rng, 12, 20, 5)));
    std::size_t arity_sum = 0, degree_sum = 0;
    for (const auto& f : fg.factors()) arity_sum += f.arity();
    for (std::size_t v = 0; v < fg.n_vars(); ++v) {
      degree_sum += fg.degree(v);
      for (auto e : fg.var_edges(v)) EXPECT_EQ(fg.edges()[e].var, v);
    }
    EXPECT_EQ(arity_sum, fg.n_edges());
    EXPECT_EQ(degree_sum, fg.n_edges());
    for (std::size_t e = 0; e < fg.n_edges(); ++e) {
      const auto& edge = fg.edges()[e];
      const auto& f = fg.factor(edge.factor);
      EXPECT_EQ(f.first_edge + edge.slot, e);
      EXPECT_EQ(f.var_ids[edge.slot], edge.var);
      EXPECT_EQ(fg.var_order()[fg.var_order_position()[e]], e);
    }
  }
}

TEST(FromCnf, PairListsExcludeTheTargetAndStaySorted) {
  auto fg = FactorGraph::from_cnf(parse_dimacs("p cnf 4 3\n1 2 3 0\n-2 4 0\n2 -3 -4 0\n"));
  const auto& ft = fg.f2v_pair_target();
  const auto& fs = fg.f2v_pair_source();
  EXPECT_TRUE(std::is_sorted(ft.begin(), ft.end()));
  std::size_t expected = 0;
  for (const auto& f : fg.factors()) expected += f.arity() * (f.arity() - 1);
  EXPECT_EQ(ft.size(), expected);
  for (std::size_t p = 0; p < ft.size(); ++p) {
    EXPECT_NE(ft[p], fs[p]);
    EXPECT_EQ(fg.edges()[ft[p]].factor, fg.edges()[fs[p]].factor);
  }
  const auto& vt = fg.v2f_pair_target();
  const auto& vs = fg.v2f_pair_source();
  EXPECT_TRUE(std::is_sorted(vt.begin(), vt.end()));
  for (std::size_t p = 0; p < vt.size(); ++p) {
    const auto target_edge = fg.var_order()[vt[p]];
    EXPECT_NE(target_edge, vs[p]);
    EXPECT_EQ(fg.edges()[target_edge].var, fg.edges()[vs[p]].var);
  }
}

TEST(PartitionBruteforce, Examples) {
  EXPECT_NEAR(partition_bruteforce(graph("p cnf 2 1\n1 2 0\n")), std::log(3.0), 1e-12);
  EXPECT_NEAR(partition_bruteforce(graph("p cnf 3 2\n1 2 0\n-2 3 0\n")), std::log(4.0), 1e-12);
  EXPECT_NEAR(partition_bruteforce(graph("p cnf 3 0\n")), std::log(8.0), 1e-12);
  EXPECT_THROW(partition_bruteforce(graph("p cnf 21 0\n")), InstanceTooLarge);
}

TEST(PartitionBruteforce, MatchesExactCount) {
  Rng rng(32);
  int checked = 0;
  while (checked < 50) {
    auto f = normalize(random_formula(rng, static_cast<std::uint32_t>(rng.uniform_int(1, 12)),
                                      static_cast<std::size_t>(rng.uniform_int(1, 25)), 5));
    auto c = count_bruteforce(f);
    if (!c.satisfiable()) continue;
    EXPECT_NEAR(partition_bruteforce(FactorGraph::from_cnf(f)), c.ln_count, 1e-6);
    ++checked;
  }
}

TEST(PartitionBruteforce, InvariantUnderRelabeling) {
  Rng rng(33);
  for (int i = 0; i < 10; ++i) {
    auto f = normalize(random_formula(rng, 10, 15, 4));
    const double z = partition_bruteforce(FactorGraph::from_cnf(f));
    auto g = normalize(relabel(f, rng));
    EXPECT_NEAR(partition_bruteforce(FactorGraph::from_cnf(g)), z, 1e-9);
  }
}

TEST(IsTree, Examples) {
  EXPECT_TRUE(is_tree(graph("p cnf 3 1\n1 2 3 0\n")));
  EXPECT_TRUE(is_tree(graph("p cnf 3 2\n1 2 0\n2 3 0\n")));
  EXPECT_FALSE(is_tree(graph("p cnf 3 3\n1 2 0\n2 3 0\n3 1 0\n")));
  EXPECT_TRUE(is_tree(graph("p cnf 4 2\n1 2 0\n3 4 0\n")));
  EXPECT_FALSE(is_tree(graph("p cnf 2 2\n1 2 0\n-1 -2 0\n")));
}

TEST(IsTree, GeneratedTreesAreTrees) {
  Rng rng(34);
  for (int i = 0; i < 50; ++i) {
    EXPECT_TRUE(is_tree(FactorGraph::from_cnf(bpgat::testing::random_tree_formula(rng, 12, 4))));
  }
}

TEST(LogSumExp, Basics) {
  std::vector<double> v{std::log(1.0), std::log(2.0), std::log(3.0)};
  EXPECT_NEAR(log_sum_exp(v), std::log(6.0), 1e-12);
  std::vector<double> big{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_EQ(log_sum_exp(std::vector<double>{}), -std::numeric_limits<double>::infinity());
  EXPECT_NEAR(log_sum_exp2(-3.0, 2.0), std::log(std::exp(-3.0) + std::exp(2.0)), 1e-12);
}

// The closed-form clause kernels must agree with plain enumeration, forward
// and backward, for random messages (including near-degenerate ones).
TEST(Marginalize, ClauseFastPathMatchesEnumeration) {
  Rng rng(35);
  for (int trial = 0; trial < 300; ++trial) {
    const auto k = static_cast<std::uint32_t>(rng.uniform_int(1, 7));
    CnfFormula cnf;
    cnf.n_vars = k;
    cnf.clauses.push_back(bpgat::testing::random_clause(rng, k, k));
    auto fg = FactorGraph::from_cnf(cnf);
    const Factor& f = fg.factor(0);
    ASSERT_GE(f.falsifying, 0);
    const double spread = trial % 3 == 0 ? 150.0 : 4.0;
    std::vector<double> msgs(2 * k * k), grad_out(2 * k);
    for (double& m : msgs) m = rng.uniform_real(-spread, spread);
    for (double& g : grad_out) g = rng.uniform_real(-1, 1);
    auto msg = [&](std::size_t s, std::size_t t) { return msgs.data() + 2 * (s * k + t); };

    std::vector<double> fast(2 * k), slow(2 * k), scratch;
    marginalize_factor(f, msg, fast.data(), scratch);
    marginalize_factor_enumerate(f, msg, slow.data(), scratch);
    for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast[i], slow[i], 1e-9 * std::max(1.0, std::abs(slow[i])));

    std::vector<double> g_fast(msgs.size(), 0.0), g_slow(msgs.size(), 0.0);
    marginalize_factor_backward(f, msg, fast.data(), grad_out.data(),
                                [&](std::size_t s, std::size_t t) { return g_fast.data() + 2 * (s * k + t); });
    marginalize_factor_backward_enumerate(f, msg, slow.data(), grad_out.data(),
                                          [&](std::size_t s, std::size_t t) { return g_slow.data() + 2 * (s * k + t); });
    for (std::size_t i = 0; i < g_fast.size(); ++i) EXPECT_NEAR(g_fast[i], g_slow[i], 1e-9) << "k=" << k << " i=" << i;
  }
}

TEST(Marginalize, NonClauseTableUsesEnumeration) {
  Factor f;
  f.var_ids = {0, 1};
  f.log_table = {std::log(1.0), std::log(2.0), std::log(3.0), std::log(4.0)};
  std::vector<double> uniform{std::log(0.5), std::log(0.5)};
  std::vector<double> out(4), scratch;
  marginalize_factor(f, [&](std::size_t, std::size_t) { return uniform.data(); }, out.data(), scratch);
  // Slot 0 = x: sum over y of table[x + 2y] / 2.
  EXPECT_NEAR(out[0], std::log((1.0 + 3.0) / 2), 1e-12);
  EXPECT_NEAR(out[1], std::log((2.0 + 4.0) / 2), 1e-12);
  EXPECT_NEAR(out[2], std::log((1.0 + 2.0) / 2), 1e-12);
  EXPECT_NEAR(out[3], std::log((3.0 + 4.0) / 2), 1e-12);
}
