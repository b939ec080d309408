#pragma once

#include <chrono>
#include <optional>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

#include "bpgat/cnf.hpp"

namespace bpgat {

using BigCount = boost::multiprecision::cpp_int;

struct ExactCount {
  BigCount count;
  // ln(count); only meaningful when count > 0.
  double ln_count = 0.0;

  bool satisfiable() const { return count > 0; }
  std::string to_string() const { return count.str(); }
};

// ln of an arbitrary-precision positive integer without overflowing double.
double log_of(const BigCount& value);

ExactCount make_exact_count(BigCount count);

inline constexpr std::uint32_t kBruteForceMaxVars = 26;

// Enumerates all 2^n assignments. Throws InstanceTooLarge when n_vars > 26.
ExactCount count_bruteforce(const CnfFormula& formula);

struct DpllOptions {
  // Zero means unlimited.
  std::chrono::milliseconds time_budget{0};
};

// DPLL with unit propagation. Every satisfied branch contributes
// 2^(unassigned variables). Throws Timeout when the budget is exceeded.
ExactCount count_dpll(const CnfFormula& formula, const DpllOptions& options = {});

bool is_satisfiable(const CnfFormula& formula, const DpllOptions& options = {});

}  // namespace bpgat
