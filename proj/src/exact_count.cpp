#include "bpgat/exact_count.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

#include "bpgat/errors.hpp"

namespace bpgat {

double log_of(const BigCount& value) {
  if (value <= 0) return -std::numeric_limits<double>::infinity();
  std::size_t bits = boost::multiprecision::msb(value) + 1;
  if (bits <= 53) return std::log(value.convert_to<double>());
  std::size_t shift = bits - 53;
  BigCount mantissa = value >> shift;
  return std::log(mantissa.convert_to<double>()) + static_cast<double>(shift) * std::log(2.0);
}

ExactCount make_exact_count(BigCount count) {
  ExactCount result;
  result.ln_count = log_of(count);
  result.count = std::move(count);
  return result;
}

ExactCount count_bruteforce(const CnfFormula& formula) {
  const std::uint32_t n = formula.n_vars;
  if (n > kBruteForceMaxVars) {
    throw InstanceTooLarge("brute-force counting supports at most " +
                           std::to_string(kBruteForceMaxVars) + " variables, got " + std::to_string(n));
  }
  formula.validate();
  struct Masks {
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
  };
  std::vector<Masks> masks;
  masks.reserve(formula.clauses.size());
  for (const auto& clause : formula.clauses) {
    Masks m;
    for (const auto& lit : clause.literals) {
      std::uint64_t bit = std::uint64_t{1} << (lit.variable - 1);
      (lit.negated ? m.neg : m.pos) |= bit;
    }
    masks.push_back(m);
  }
  const std::uint64_t total = std::uint64_t{1} << n;
  const std::uint64_t all = total - 1;
  std::uint64_t count = 0;
  for (std::uint64_t x = 0; x < total; ++x) {
    bool ok = true;
    for (const auto& m : masks) {
      if ((x & m.pos) == 0 && ((~x & all) & m.neg) == 0) {
        ok = false;
        break;
      }
    }
    count += ok ? 1 : 0;
  }
  return make_exact_count(BigCount(count));
}

namespace {

class Dpll {
 public:
  Dpll(const CnfFormula& formula, const DpllOptions& options, bool decision_only)
      : n_(formula.n_vars), decision_only_(decision_only), options_(options) {
    formula.validate();
    clauses_.reserve(formula.clauses.size());
    for (const auto& clause : formula.clauses) {
      std::vector<int> lits;
      for (const auto& lit : clause.literals) lits.push_back(static_cast<int>(lit.to_dimacs()));
      clauses_.push_back(std::move(lits));
    }
    value_.assign(n_ + 1, kUnassigned);
    start_ = std::chrono::steady_clock::now();
  }

  BigCount run() { return search(); }

 private:
  static constexpr std::int8_t kUnassigned = -1;

  enum class Status { kSatisfied, kConflict, kUnit, kOpen };

  Status clause_status(const std::vector<int>& clause, int* unit) const {
    int free_count = 0;
    for (int lit : clause) {
      std::int8_t v = value_[static_cast<std::size_t>(std::abs(lit))];
      if (v == kUnassigned) {
        ++free_count;
        *unit = lit;
      } else if ((lit > 0) == (v == 1)) {
        return Status::kSatisfied;
      }
    }
    if (free_count == 0) return Status::kConflict;
    return free_count == 1 ? Status::kUnit : Status::kOpen;
  }

  void assign(int lit) {
    value_[static_cast<std::size_t>(std::abs(lit))] = lit > 0 ? 1 : 0;
    trail_.push_back(std::abs(lit));
  }

  void undo_to(std::size_t mark) {
    while (trail_.size() > mark) {
      value_[static_cast<std::size_t>(trail_.back())] = kUnassigned;
      trail_.pop_back();
    }
  }

  // Returns false on conflict.
  bool propagate() {
    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& clause : clauses_) {
        int unit = 0;
        Status s = clause_status(clause, &unit);
        if (s == Status::kConflict) return false;
        if (s == Status::kUnit) {
          assign(unit);
          changed = true;
        }
      }
    }
    return true;
  }

  void check_budget() {
    if (options_.time_budget.count() <= 0) return;
    if ((++nodes_ & 0x3ff) != 0) return;
    if (std::chrono::steady_clock::now() - start_ > options_.time_budget) {
      throw Timeout("exact counting exceeded " + std::to_string(options_.time_budget.count()) + " ms");
    }
  }

  // Most frequent unassigned variable across unsatisfied clauses; ties go to
  // the lowest index. Returns 0 when every clause is satisfied.
  int pick_branch_variable() {
    occurrences_.assign(n_ + 1, 0);
    bool any_open = false;
    for (const auto& clause : clauses_) {
      int unit = 0;
      if (clause_status(clause, &unit) == Status::kSatisfied) continue;
      any_open = true;
      for (int lit : clause) {
        auto var = static_cast<std::size_t>(std::abs(lit));
        if (value_[var] == kUnassigned) ++occurrences_[var];
      }
    }
    if (!any_open) return 0;
    int best = 0;
    for (std::size_t v = 1; v <= n_; ++v) {
      if (occurrences_[v] > (best == 0 ? 0 : occurrences_[static_cast<std::size_t>(best)])) {
        best = static_cast<int>(v);
      }
    }
    return best;
  }

  BigCount search() {
    check_budget();
    std::size_t mark = trail_.size();
    if (!propagate()) {
      undo_to(mark);
      return 0;
    }
    int var = pick_branch_variable();
    if (var == 0) {
      std::size_t free_vars = n_ - trail_.size();
      undo_to(mark);
      if (decision_only_) return 1;
      return BigCount(1) << free_vars;
    }
    BigCount total = 0;
    for (int lit : {var, -var}) {
      std::size_t before = trail_.size();
      assign(lit);
      total += search();
      undo_to(before);
      if (decision_only_ && total > 0) break;
    }
    undo_to(mark);
    return total;
  }

  std::size_t n_;
  bool decision_only_;
  DpllOptions options_;
  std::vector<std::vector<int>> clauses_;
  std::vector<std::int8_t> value_;
  std::vector<int> trail_;
  std::vector<std::uint32_t> occurrences_;
  std::chrono::steady_clock::time_point start_;
  std::uint64_t nodes_ = 0;
};

}  // namespace

ExactCount count_dpll(const CnfFormula& formula, const DpllOptions& options) {
  Dpll solver(formula, options, false);
  return make_exact_count(solver.run());
}

bool is_satisfiable(const CnfFormula& formula, const DpllOptions& options) {
  Dpll solver(formula, options, true);
  return solver.run() > 0;
}

}  // namespace bpgat
