#include <chrono>
#include <cmath>

#include <gtest/gtest.h>

#include "bpgat/cnf.hpp"
#include "bpgat/errors.hpp"
#include "bpgat/exact_count.hpp"
#include "test_util.hpp"

using namespace bpgat;
using bpgat::testing::random_formula;

namespace {

// Independent enumerator: checks every assignment literal by literal.
std::uint64_t enumerate_models(const CnfFormula& f) {
  std::uint64_t count = 0;
  for (std::uint64_t a = 0; a < (std::uint64_t{1} << f.n_vars); ++a) {
    bool all = true;
    for (const auto& c : f.clauses) {
      bool sat = false;
      for (const auto& l : c.literals) sat = sat || (((a >> (l.variable - 1)) & 1u) != static_cast<unsigned>(l.negated));
      if (!sat) {
        all = false;
        break;
      }
    }
    count += all;
  }
  return count;
}

CnfFormula parse(const char* text) { return parse_dimacs(text); }

}  // namespace

TEST(CountBruteforce, Examples) {
  EXPECT_EQ(count_bruteforce(parse("p cnf 2 1\n1 2 0\n")).count, 3);
  EXPECT_EQ(count_bruteforce(parse("p cnf 4 0\n")).count, 16);
  EXPECT_EQ(count_bruteforce(parse("p cnf 3 2\n1 2 0\n-2 3 0\n")).count, 4);
}

TEST(CountBruteforce, MatchesIndependentEnumeration) {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    auto f = random_formula(rng, static_cast<std::uint32_t>(rng.uniform_int(1, 12)),
                            static_cast<std::size_t>(rng.uniform_int(0, 25)), 4);
    EXPECT_EQ(count_bruteforce(f).count, enumerate_models(f));
  }
}

TEST(CountBruteforce, RejectsLargeInstances) {
  CnfFormula f;
  f.n_vars = 27;
  EXPECT_THROW(count_bruteforce(f), InstanceTooLarge);
}

TEST(CountDpll, Examples) {
  EXPECT_EQ(count_dpll(parse("p cnf 1 2\n1 0\n-1 0\n")).count, 0);
  EXPECT_FALSE(count_dpll(parse("p cnf 1 2\n1 0\n-1 0\n")).satisfiable());
  EXPECT_EQ(count_dpll(parse("p cnf 5 1\n1 0\n")).count, 16);
  EXPECT_EQ(count_dpll(parse("p cnf 3 1\n0\n")).count, 0);
  EXPECT_EQ(count_dpll(parse("p cnf 0 0\n")).count, 1);
}

TEST(CountDpll, AgreesWithBruteforce) {
  Rng rng(22);
  for (int i = 0; i < 200; ++i) {
    auto f = random_formula(rng, static_cast<std::uint32_t>(rng.uniform_int(1, 15)),
                            static_cast<std::size_t>(rng.uniform_int(0, 40)), 5);
    const auto exact = count_bruteforce(f);
    const auto dpll = count_dpll(f);
    EXPECT_EQ(dpll.count, exact.count);
    EXPECT_EQ(is_satisfiable(f), exact.count > 0);
  }
}

TEST(CountDpll, FreshVariableDoublesAndClausesNeverIncrease) {
  Rng rng(23);
  for (int i = 0; i < 50; ++i) {
    auto f = random_formula(rng, static_cast<std::uint32_t>(rng.uniform_int(2, 14)),
                            static_cast<std::size_t>(rng.uniform_int(0, 20)), 4);
    const auto base = count_dpll(f).count;
    auto wider = f;
    wider.n_vars += 1;
    EXPECT_EQ(count_dpll(wider).count, 2 * base);
    auto tighter = f;
    tighter.clauses.push_back(bpgat::testing::random_clause(rng, f.n_vars, 3));
    EXPECT_LE(count_dpll(tighter).count, base);
  }
}

TEST(CountDpll, HugeCountsKeepLogAccurate) {
  CnfFormula f;
  f.n_vars = 500;
  auto c = count_dpll(f);
  EXPECT_EQ(c.count, BigCount(1) << 500);
  EXPECT_NEAR(c.ln_count, 500 * std::log(2.0), 1e-12 * 500 * std::log(2.0));
}

TEST(CountDpll, TimesOutOnBudget) {
  Rng rng(24);
  // Wide, loosely constrained instance: far too many branches for a 1 ms budget.
  auto f = random_formula(rng, 200, 150, 12);
  DpllOptions opts;
  opts.time_budget = std::chrono::milliseconds(1);
  EXPECT_THROW(count_dpll(f, opts), Timeout);
}

TEST(LogOf, MatchesStdLogOnSmallValues) {
  for (std::uint64_t v : {1ull, 2ull, 3ull, 1000ull, 123456789ull}) {
    EXPECT_NEAR(log_of(BigCount(v)), std::log(static_cast<double>(v)), 1e-12 * std::max(1.0, std::log(double(v))));
  }
  EXPECT_NEAR(log_of(BigCount(3) << 1000), std::log(3.0) + 1000 * std::log(2.0), 1e-9);
}
