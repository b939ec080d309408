#include "bpgat/cnf.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include "bpgat/errors.hpp"

namespace bpgat {

namespace {

std::vector<Literal> sorted_unique(const std::vector<Literal>& lits) {
  std::vector<Literal> out = lits;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

long parse_long(std::string_view token, std::size_t line_no) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": expected integer, got '" +
                     std::string(token) + "'");
  }
  return value;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

}  // namespace

Literal Literal::from_dimacs(long value) {
  if (value == 0) throw InvalidArgument("literal 0 is the clause terminator");
  Literal lit;
  lit.variable = static_cast<std::uint32_t>(value < 0 ? -value : value);
  lit.negated = value < 0;
  return lit;
}

bool Clause::same_literals(const Clause& other) const {
  return sorted_unique(literals) == sorted_unique(other.literals);
}

bool Clause::is_tautology() const {
  auto lits = sorted_unique(literals);
  for (std::size_t i = 1; i < lits.size(); ++i) {
    if (lits[i].variable == lits[i - 1].variable) return true;
  }
  return false;
}

bool CnfFormula::has_empty_clause() const {
  return std::any_of(clauses.begin(), clauses.end(),
                     [](const Clause& c) { return c.literals.empty(); });
}

void CnfFormula::validate() const {
  for (const auto& clause : clauses) {
    for (const auto& lit : clause.literals) {
      if (lit.variable < 1 || lit.variable > n_vars) {
        throw InvalidArgument("literal " + std::to_string(lit.to_dimacs()) +
                              " outside declared range 1.." + std::to_string(n_vars));
      }
    }
  }
}

CnfFormula parse_dimacs(std::istream& in) {
  CnfFormula formula;
  bool have_header = false;
  long declared_clauses = 0;
  std::vector<Literal> current;
  bool clause_open = false;
  std::string line;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens[0][0] == 'c') continue;
    if (tokens[0] == "%") break;  // SATLIB trailer
    if (tokens[0] == "p") {
      if (have_header) throw ParseError("line " + std::to_string(line_no) + ": duplicate header");
      if (tokens.size() != 4 || tokens[1] != "cnf") {
        throw ParseError("line " + std::to_string(line_no) + ": malformed header, expected 'p cnf <vars> <clauses>'");
      }
      long nv = parse_long(tokens[2], line_no);
      declared_clauses = parse_long(tokens[3], line_no);
      if (nv < 0 || declared_clauses < 0) {
        throw ParseError("line " + std::to_string(line_no) + ": negative header counts");
      }
      formula.n_vars = static_cast<std::uint32_t>(nv);
      have_header = true;
      continue;
    }
    if (!have_header) throw ParseError("line " + std::to_string(line_no) + ": clause before 'p cnf' header");
    for (auto token : tokens) {
      long value = parse_long(token, line_no);
      if (value == 0) {
        formula.clauses.push_back(Clause{std::move(current)});
        current.clear();
        clause_open = false;
        continue;
      }
      long magnitude = value < 0 ? -value : value;
      if (magnitude > static_cast<long>(formula.n_vars)) {
        throw ParseError("line " + std::to_string(line_no) + ": literal " + std::to_string(value) +
                         " exceeds declared variable count " + std::to_string(formula.n_vars));
      }
      current.push_back(Literal::from_dimacs(value));
      clause_open = true;
    }
  }
  if (!have_header) throw ParseError("missing 'p cnf' header");
  if (clause_open) throw ParseError("last clause is not terminated by 0");
  if (static_cast<long>(formula.clauses.size()) != declared_clauses) {
    throw ParseError("header declares " + std::to_string(declared_clauses) + " clauses, found " +
                     std::to_string(formula.clauses.size()));
  }
  return formula;
}

CnfFormula parse_dimacs(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_dimacs(in);
}

CnfFormula read_dimacs_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return parse_dimacs(in);
}

void write_dimacs(const CnfFormula& formula, std::ostream& out) {
  out << "p cnf " << formula.n_vars << ' ' << formula.clauses.size() << '\n';
  for (const auto& clause : formula.clauses) {
    for (const auto& lit : clause.literals) out << lit.to_dimacs() << ' ';
    out << "0\n";
  }
}

std::string write_dimacs(const CnfFormula& formula) {
  std::ostringstream out;
  write_dimacs(formula, out);
  return out.str();
}

CnfFormula normalize(const CnfFormula& formula) {
  CnfFormula out;
  out.n_vars = formula.n_vars;
  std::set<std::vector<Literal>> seen;
  for (const auto& clause : formula.clauses) {
    Clause merged;
    for (const auto& lit : clause.literals) {
      if (std::find(merged.literals.begin(), merged.literals.end(), lit) == merged.literals.end()) {
        merged.literals.push_back(lit);
      }
    }
    if (merged.is_tautology()) continue;
    if (!seen.insert(sorted_unique(merged.literals)).second) continue;
    out.clauses.push_back(std::move(merged));
  }
  return out;
}

}  // namespace bpgat
