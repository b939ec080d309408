#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace bpgat {

struct Literal {
  std::uint32_t variable = 1;  // 1-based
  bool negated = false;

  static Literal from_dimacs(long value);
  long to_dimacs() const { return negated ? -static_cast<long>(variable) : static_cast<long>(variable); }

  friend bool operator==(const Literal&, const Literal&) = default;
  friend auto operator<=>(const Literal&, const Literal&) = default;
};

struct Clause {
  std::vector<Literal> literals;

  // Literal-set equality: order and repetition are ignored.
  bool same_literals(const Clause& other) const;
  bool is_tautology() const;

  friend bool operator==(const Clause&, const Clause&) = default;
};

struct CnfFormula {
  std::uint32_t n_vars = 0;
  std::vector<Clause> clauses;

  bool has_empty_clause() const;
  // Throws InvalidArgument if any literal is outside 1..n_vars.
  void validate() const;

  friend bool operator==(const CnfFormula&, const CnfFormula&) = default;
};

CnfFormula parse_dimacs(std::istream& in);
CnfFormula parse_dimacs(std::string_view text);
CnfFormula read_dimacs_file(const std::string& path);

void write_dimacs(const CnfFormula& formula, std::ostream& out);
std::string write_dimacs(const CnfFormula& formula);

// Merges repeated literals, drops tautologies and duplicate clauses.
// Clause order is preserved (first occurrence wins); literal order within a
// clause is preserved (first occurrence wins).
CnfFormula normalize(const CnfFormula& formula);

}  // namespace bpgat
