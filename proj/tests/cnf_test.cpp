#include <sstream>

#include <gtest/gtest.h>

#include "bpgat/cnf.hpp"
#include "bpgat/errors.hpp"
#include "bpgat/exact_count.hpp"
#include "test_util.hpp"

using namespace bpgat;
using bpgat::testing::random_formula;

namespace {

Clause clause(std::initializer_list<long> lits) {
  Clause c;
  for (long l : lits) c.literals.push_back(Literal::from_dimacs(l));
  return c;
}

CnfFormula formula(std::uint32_t n, std::initializer_list<std::initializer_list<long>> clauses) {
  CnfFormula f;
  f.n_vars = n;
  for (auto c : clauses) f.clauses.push_back(clause(c));
  return f;
}

}  // namespace

TEST(ParseDimacs, SingleClause) {
  auto f = parse_dimacs("p cnf 2 1\n1 2 0");
  EXPECT_EQ(f, formula(2, {{1, 2}}));
}

TEST(ParseDimacs, CommentsAndNegation) {
  auto f = parse_dimacs("c note\np cnf 3 2\n1 -2 0\n2 3 0");
  EXPECT_EQ(f, formula(3, {{1, -2}, {2, 3}}));
  EXPECT_TRUE(f.clauses[0].literals[1].negated);
}

TEST(ParseDimacs, ClauseSpanningLines) {
  EXPECT_EQ(parse_dimacs("p cnf 3 1\n1\n-2\n3 0\n"), formula(3, {{1, -2, 3}}));
}

TEST(ParseDimacs, KeepsEmptyClause) {
  auto f = parse_dimacs("p cnf 1 2\n0\n1 0\n");
  ASSERT_EQ(f.clauses.size(), 2u);
  EXPECT_TRUE(f.has_empty_clause());
}

TEST(ParseDimacs, Errors) {
  EXPECT_THROW(parse_dimacs("p cnf 2 1\n3 0"), ParseError);
  EXPECT_THROW(parse_dimacs("p cnf 2 1\n-3 0"), ParseError);
  EXPECT_THROW(parse_dimacs("1 2 0\n"), ParseError);
  EXPECT_THROW(parse_dimacs("p cnf x 1\n1 0"), ParseError);
  EXPECT_THROW(parse_dimacs("p dnf 2 1\n1 0"), ParseError);
  EXPECT_THROW(parse_dimacs("p cnf 2 1\n1 2"), ParseError);
  EXPECT_THROW(parse_dimacs("p cnf 2 2\n1 2 0\n"), ParseError);
  EXPECT_THROW(parse_dimacs("p cnf 2 1\n1 0\n2 0\n"), ParseError);
  EXPECT_THROW(parse_dimacs("p cnf 2 1\np cnf 2 1\n1 0\n"), ParseError);
  EXPECT_THROW(parse_dimacs(""), ParseError);
}

TEST(WriteDimacs, Examples) {
  EXPECT_EQ(write_dimacs(formula(2, {{1, 2}})), "p cnf 2 1\n1 2 0\n");
  EXPECT_EQ(write_dimacs(formula(3, {})), "p cnf 3 0\n");
}

TEST(WriteDimacs, RoundTripOnRandomFormulae) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    auto f = random_formula(rng, static_cast<std::uint32_t>(rng.uniform_int(1, 30)),
                            static_cast<std::size_t>(rng.uniform_int(0, 40)), 8);
    EXPECT_EQ(parse_dimacs(write_dimacs(f)), f);
    auto n = normalize(f);
    EXPECT_EQ(parse_dimacs(write_dimacs(n)), n);
  }
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize(formula(2, {{1, 1, 2}})), formula(2, {{1, 2}}));
  EXPECT_EQ(normalize(formula(2, {{1, -1}, {2}})), formula(2, {{2}}));
  EXPECT_EQ(normalize(formula(2, {{1, 2}, {2, 1}})), formula(2, {{1, 2}}));
}

TEST(Normalize, KeepsNVarsForUnusedVariables) {
  EXPECT_EQ(normalize(formula(5, {{1, -1}})).n_vars, 5u);
}

TEST(Normalize, IdempotentAndCountPreserving) {
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    // Long clauses over few variables force repeats, tautologies and duplicates.
    CnfFormula f;
    f.n_vars = static_cast<std::uint32_t>(rng.uniform_int(1, 12));
    const auto m = rng.uniform_int(0, 20);
    for (std::int64_t j = 0; j < m; ++j) {
      Clause c;
      const auto len = rng.uniform_int(1, 5);
      for (std::int64_t t = 0; t < len; ++t) {
        c.literals.push_back(Literal{static_cast<std::uint32_t>(rng.uniform_int(1, f.n_vars)), rng.bernoulli(0.5)});
      }
      f.clauses.push_back(c);
    }
    auto n = normalize(f);
    EXPECT_EQ(normalize(n), n);
    EXPECT_EQ(count_bruteforce(n).count, count_bruteforce(f).count);
    for (std::size_t a = 0; a < n.clauses.size(); ++a) {
      EXPECT_FALSE(n.clauses[a].is_tautology());
      for (std::size_t b = a + 1; b < n.clauses.size(); ++b) EXPECT_FALSE(n.clauses[a].same_literals(n.clauses[b]));
      const auto& lits = n.clauses[a].literals;
      for (std::size_t p = 0; p < lits.size(); ++p)
        for (std::size_t q = p + 1; q < lits.size(); ++q) EXPECT_NE(lits[p].variable, lits[q].variable);
    }
  }
}

TEST(Clause, SameLiteralsIgnoresOrderAndRepeats) {
  EXPECT_TRUE(clause({1, -2}).same_literals(clause({-2, 1, 1})));
  EXPECT_FALSE(clause({1, -2}).same_literals(clause({1, 2})));
  EXPECT_TRUE(clause({3, -3}).is_tautology());
}

TEST(Literal, FromDimacsRejectsZero) {
  EXPECT_THROW(Literal::from_dimacs(0), InvalidArgument);
  EXPECT_EQ(Literal::from_dimacs(-4).to_dimacs(), -4);
}

TEST(CnfFormula, ValidateCatchesOutOfRange) {
  auto f = formula(2, {{1, 2}});
  EXPECT_NO_THROW(f.validate());
  f.n_vars = 1;
  EXPECT_THROW(f.validate(), InvalidArgument);
}
