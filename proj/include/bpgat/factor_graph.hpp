#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "bpgat/cnf.hpp"

namespace bpgat {

// Stands in for ln 0 in clause tables so every log-sum-exp and gradient stays
// finite. A falsified configuration carries weight e^-100 ~ 3.7e-44.
inline constexpr double kNegSentinel = -100.0;

inline constexpr std::size_t kMaxFactorArity = 20;

struct Factor {
  std::vector<std::uint32_t> var_ids;  // 0-based, distinct
  // 2^k entries; bit s of the index is the value of var_ids[s] (0 = false).
  std::vector<double> log_table;
  std::uint32_t first_edge = 0;
  // Index of the only nonzero table entry when the table has clause form
  // (every other entry is 0), else -1. Enables O(k^2) marginalisation.
  std::int64_t falsifying = -1;

  std::size_t arity() const { return var_ids.size(); }
  std::size_t table_size() const { return log_table.size(); }
};

struct Edge {
  std::uint32_t factor = 0;
  std::uint32_t slot = 0;
  std::uint32_t var = 0;  // 0-based
};

// Bipartite clause/variable graph. Edges are numbered factor-major: the edges
// of factor j are first_edge .. first_edge + arity - 1, in slot order.
//
// Two "exclusive neighbourhood" pair lists are precomputed for message
// passing. For factor-to-variable messages, target edge e pairs with every
// other edge of the same factor. For variable-to-factor messages, target edge
// e pairs with every other edge of the same variable; those targets are
// enumerated in variable-major order so segment ids come out sorted.
class FactorGraph {
 public:
  static FactorGraph from_cnf(const CnfFormula& formula);

  std::size_t n_vars() const { return n_vars_; }
  std::size_t n_factors() const { return factors_.size(); }
  std::size_t n_edges() const { return edges_.size(); }

  const std::vector<Factor>& factors() const { return factors_; }
  const Factor& factor(std::size_t j) const { return factors_[j]; }
  const std::vector<Edge>& edges() const { return edges_; }

  std::size_t degree(std::size_t var) const { return var_offsets_[var + 1] - var_offsets_[var]; }
  // Edge ids incident to `var`, ascending.
  std::span<const std::uint32_t> var_edges(std::size_t var) const {
    return {var_order_.data() + var_offsets_[var], degree(var)};
  }

  // Edge ids in variable-major order, and its inverse permutation.
  const std::vector<std::uint32_t>& var_order() const { return var_order_; }
  const std::vector<std::uint32_t>& var_order_position() const { return var_order_pos_; }
  const std::vector<std::uint32_t>& var_offsets() const { return var_offsets_; }

  // Factor-to-variable pairs: segment = target edge id (ascending), source =
  // another edge of the same factor.
  const std::vector<std::uint32_t>& f2v_pair_target() const { return f2v_target_; }
  const std::vector<std::uint32_t>& f2v_pair_source() const { return f2v_source_; }
  // Offsets into the f2v pair list per target edge (size E + 1).
  const std::vector<std::uint32_t>& f2v_pair_offsets() const { return f2v_offsets_; }

  // Variable-to-factor pairs: segment = position of the target edge in
  // var_order() (ascending), source = another edge of the same variable.
  const std::vector<std::uint32_t>& v2f_pair_target() const { return v2f_target_; }
  const std::vector<std::uint32_t>& v2f_pair_source() const { return v2f_source_; }

 private:
  std::size_t n_vars_ = 0;
  std::vector<Factor> factors_;
  std::vector<Edge> edges_;
  std::vector<std::uint32_t> var_offsets_;
  std::vector<std::uint32_t> var_order_;
  std::vector<std::uint32_t> var_order_pos_;
  std::vector<std::uint32_t> f2v_target_, f2v_source_, f2v_offsets_;
  std::vector<std::uint32_t> v2f_target_, v2f_source_;
};

// ln Z by enumerating all 2^n assignments. Throws InstanceTooLarge when n > 20.
double partition_bruteforce(const FactorGraph& fg);

// True iff every connected component is acyclic (E = nodes - components).
bool is_tree(const FactorGraph& fg);

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  double hi = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

inline double log_sum_exp2(double a, double b) {
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// a - LSE(a, b), accurate even when the result is far below one ulp of a.
inline double log_normalized(double a, double b) {
  return a >= b ? -std::log1p(std::exp(b - a)) : (a - b) - std::log1p(std::exp(a - b));
}

// 1 - e^r + e^(c + r): normaliser of a clause factor once the other slots put
// log-probability r on being all false and the falsifying entry weighs e^c.
inline double clause_slack(double log_all_false, double table_value) {
  return -std::expm1(log_all_false) + std::exp(table_value + log_all_false);
}

// Factor-to-variable marginalisation in log space. For each slot s and value x:
//
//   out[2s + x] = LSE over local assignments a with a_s = x of
//                 table[a] + sum_{t != s} msg(s, t)[a_t]
//
// msg(s, t) returns a pointer to the length-2 log message that slot t feeds
// into the message for slot s. This version enumerates all 2^k local
// assignments, O(k^2 2^k), and works for any table.
template <class MsgFn>
void marginalize_factor_enumerate(const Factor& f, MsgFn&& msg, double* out, std::vector<double>& scratch) {
  const std::size_t k = f.arity();
  const std::size_t n = f.table_size();
  scratch.resize(n);
  std::vector<const double*> row(k);
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t t = 0; t < k; ++t) row[t] = t == s ? nullptr : msg(s, t);
    double hi[2] = {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (std::size_t a = 0; a < n; ++a) {
      double v = f.log_table[a];
      for (std::size_t t = 0; t < k; ++t) {
        if (t != s) v += row[t][(a >> t) & 1u];
      }
      scratch[a] = v;
      auto x = (a >> s) & 1u;
      hi[x] = std::max(hi[x], v);
    }
    double acc[2] = {0.0, 0.0};
    for (std::size_t a = 0; a < n; ++a) {
      auto x = (a >> s) & 1u;
      acc[x] += std::exp(scratch[a] - hi[x]);
    }
    out[2 * s] = hi[0] + std::log(acc[0]);
    out[2 * s + 1] = hi[1] + std::log(acc[1]);
  }
}

// Reverse pass of marginalize_factor_enumerate. `out` holds its forward
// result and `grad_out` the upstream gradient (both 2k); gradients are added
// into grad_msg(s, t).
template <class MsgFn, class GradFn>
void marginalize_factor_backward_enumerate(const Factor& f, MsgFn&& msg, const double* out, const double* grad_out,
                                           GradFn&& grad_msg) {
  const std::size_t k = f.arity();
  const std::size_t n = f.table_size();
  std::vector<const double*> row(k);
  std::vector<double*> grow(k);
  for (std::size_t s = 0; s < k; ++s) {
    if (grad_out[2 * s] == 0.0 && grad_out[2 * s + 1] == 0.0) continue;
    for (std::size_t t = 0; t < k; ++t) {
      row[t] = t == s ? nullptr : msg(s, t);
      grow[t] = t == s ? nullptr : grad_msg(s, t);
    }
    for (std::size_t a = 0; a < n; ++a) {
      double v = f.log_table[a];
      for (std::size_t t = 0; t < k; ++t) {
        if (t != s) v += row[t][(a >> t) & 1u];
      }
      auto x = (a >> s) & 1u;
      double w = grad_out[2 * s + x] * std::exp(v - out[2 * s + x]);
      for (std::size_t t = 0; t < k; ++t) {
        if (t != s) grow[t][(a >> t) & 1u] += w;
      }
    }
  }
}

// Same result as marginalize_factor_enumerate. Clause-form tables take an
// O(k^2) closed form: every value of slot s except the falsifying one sees
// table 0 everywhere, so its LSE is the sum of the other slots' LSEs.
template <class MsgFn>
void marginalize_factor(const Factor& f, MsgFn&& msg, double* out, std::vector<double>& scratch) {
  if (f.falsifying < 0) {
    marginalize_factor_enumerate(f, msg, out, scratch);
    return;
  }
  const std::size_t k = f.arity();
  const auto bad = static_cast<std::size_t>(f.falsifying);
  const double c = f.log_table[bad];
  for (std::size_t s = 0; s < k; ++s) {
    double total = 0.0, log_all_false = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      if (t == s) continue;
      const double* m = msg(s, t);
      const auto t_bad = (bad >> t) & 1u;
      total += log_sum_exp2(m[0], m[1]);
      log_all_false += log_normalized(m[t_bad], m[1 - t_bad]);
    }
    const auto x_bad = (bad >> s) & 1u;
    out[2 * s + (1 - x_bad)] = total;
    out[2 * s + x_bad] = total + std::log(clause_slack(log_all_false, c));
  }
}

template <class MsgFn, class GradFn>
void marginalize_factor_backward(const Factor& f, MsgFn&& msg, const double* out, const double* grad_out,
                                 GradFn&& grad_msg) {
  if (f.falsifying < 0) {
    marginalize_factor_backward_enumerate(f, msg, out, grad_out, grad_msg);
    return;
  }
  const std::size_t k = f.arity();
  const auto bad = static_cast<std::size_t>(f.falsifying);
  const double c = f.log_table[bad];
  std::vector<double> prob(2 * k);
  for (std::size_t s = 0; s < k; ++s) {
    const auto x_bad = (bad >> s) & 1u;
    const double g_bad = grad_out[2 * s + x_bad];
    const double g_ok = grad_out[2 * s + (1 - x_bad)];
    if (g_bad == 0.0 && g_ok == 0.0) continue;
    double log_all_false = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      if (t == s) continue;
      const double* m = msg(s, t);
      const auto t_bad = (bad >> t) & 1u;
      prob[2 * t] = std::exp(log_normalized(m[0], m[1]));
      prob[2 * t + 1] = std::exp(log_normalized(m[1], m[0]));
      log_all_false += log_normalized(m[t_bad], m[1 - t_bad]);
    }
    // d/dr log(slack) = -e^r (1 - e^c) / slack
    const double ratio = std::exp(log_all_false) * -std::expm1(c) / clause_slack(log_all_false, c);
    for (std::size_t t = 0; t < k; ++t) {
      if (t == s) continue;
      double* g = grad_msg(s, t);
      const auto t_bad = (bad >> t) & 1u;
      for (std::size_t v = 0; v < 2; ++v) {
        const double p = prob[2 * t + v];
        // [v == t_bad] - p, with 1 - p taken as the other value's probability.
        const double centred = v == t_bad ? prob[2 * t + 1 - v] : -p;
        g[v] += (g_bad + g_ok) * p - g_bad * ratio * centred;
      }
    }
  }
}

}  // namespace bpgat
