#include "bpgat/bp.hpp"

#include <cmath>

#include "bpgat/errors.hpp"

namespace bpgat {

void BpOptions::validate() const {
  if (max_iters < 1) throw InvalidArgument("max_iters must be >= 1");
  if (!(damping >= 0.0 && damping <= 1.0)) throw InvalidArgument("damping must lie in [0, 1]");
}

void log_normalize_rows(std::vector<double>& rows) {
  for (std::size_t r = 0; r + 1 < rows.size(); r += 2) {
    double hi = std::max(rows[r], rows[r + 1]);
    double z = hi + std::log(std::exp(rows[r] - hi) + std::exp(rows[r + 1] - hi));
    rows[r] -= z;
    rows[r + 1] -= z;
  }
}

MessageState init_messages(const FactorGraph& fg) {
  MessageState s;
  s.v2f.assign(2 * fg.n_edges(), -std::log(2.0));
  s.f2v.assign(2 * fg.n_edges(), -std::log(2.0));
  return s;
}

MessageState bp_step(const FactorGraph& fg, const MessageState& state) {
  MessageState next;
  next.iteration = state.iteration + 1;
  const std::size_t e_count = fg.n_edges();

  // Variable to factor: sum of the other incoming factor messages.
  next.v2f.assign(2 * e_count, 0.0);
  const auto& order = fg.var_order();
  const auto& tgt = fg.v2f_pair_target();
  const auto& src = fg.v2f_pair_source();
  for (std::size_t p = 0; p < tgt.size(); ++p) {
    auto e = order[tgt[p]];
    next.v2f[2 * e] += state.f2v[2 * src[p]];
    next.v2f[2 * e + 1] += state.f2v[2 * src[p] + 1];
  }
  log_normalize_rows(next.v2f);

  next.f2v.assign(2 * e_count, 0.0);
  std::vector<double> scratch;
  for (const auto& f : fg.factors()) {
    const double* v2f = state.v2f.data() + 2 * f.first_edge;
    marginalize_factor(
        f, [&](std::size_t, std::size_t t) { return v2f + 2 * t; },
        next.f2v.data() + 2 * f.first_edge, scratch);
  }
  log_normalize_rows(next.f2v);
  return next;
}

MessageState damp(const MessageState& prev, const MessageState& next, double alpha) {
  if (prev.v2f.size() != next.v2f.size() || prev.f2v.size() != next.f2v.size()) {
    throw ShapeError("damp: message states have different shapes");
  }
  MessageState out;
  out.iteration = next.iteration;
  auto blend = [alpha](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = alpha * b[i] + (1.0 - alpha) * a[i];
    log_normalize_rows(r);
    return r;
  };
  out.v2f = blend(prev.v2f, next.v2f);
  out.f2v = blend(prev.f2v, next.f2v);
  return out;
}

std::vector<std::array<double, 2>> variable_beliefs(const FactorGraph& fg, const MessageState& state) {
  std::vector<std::array<double, 2>> beliefs(fg.n_vars());
  for (std::size_t i = 0; i < fg.n_vars(); ++i) {
    double l0 = 0.0;
    double l1 = 0.0;
    for (auto e : fg.var_edges(i)) {
      l0 += state.f2v[2 * e];
      l1 += state.f2v[2 * e + 1];
    }
    double hi = std::max(l0, l1);
    double z = hi + std::log(std::exp(l0 - hi) + std::exp(l1 - hi));
    beliefs[i] = {std::exp(l0 - z), std::exp(l1 - z)};
  }
  return beliefs;
}

std::vector<std::vector<double>> factor_beliefs(const FactorGraph& fg, const MessageState& state) {
  std::vector<std::vector<double>> beliefs;
  beliefs.reserve(fg.n_factors());
  for (const auto& f : fg.factors()) {
    std::vector<double> logits(f.table_size());
    for (std::size_t a = 0; a < logits.size(); ++a) {
      double v = f.log_table[a];
      for (std::size_t s = 0; s < f.arity(); ++s) v += state.v2f[2 * (f.first_edge + s) + ((a >> s) & 1u)];
      logits[a] = v;
    }
    double z = log_sum_exp(logits);
    for (double& v : logits) v = std::exp(v - z);
    beliefs.push_back(std::move(logits));
  }
  return beliefs;
}

BetheTerms bethe_terms(const FactorGraph& fg, const std::vector<std::array<double, 2>>& var_beliefs,
                       const std::vector<std::vector<double>>& fac_beliefs) {
  auto x_log_x = [](double b) { return b > 0.0 ? b * std::log(b) : 0.0; };
  BetheTerms t;
  for (std::size_t j = 0; j < fg.n_factors(); ++j) {
    const auto& f = fg.factor(j);
    const auto& b = fac_beliefs[j];
    for (std::size_t a = 0; a < b.size(); ++a) {
      if (b[a] >= kBeliefMaskThreshold) t.log_factor_expectation += b[a] * f.log_table[a];
      t.factor_entropy -= x_log_x(b[a]);
    }
  }
  for (std::size_t i = 0; i < fg.n_vars(); ++i) {
    double coeff = static_cast<double>(fg.degree(i)) - 1.0;
    t.var_entropy += coeff * (x_log_x(var_beliefs[i][0]) + x_log_x(var_beliefs[i][1]));
  }
  return t;
}

BetheSummary bethe_free_energy(const FactorGraph& fg,
                               const std::vector<std::array<double, 2>>& var_beliefs,
                               const std::vector<std::vector<double>>& fac_beliefs) {
  BetheTerms t = bethe_terms(fg, var_beliefs, fac_beliefs);
  BetheSummary s;
  s.U = -t.log_factor_expectation;
  s.H = t.factor_entropy + t.var_entropy;
  s.F = s.U - s.H;
  return s;
}

BetheTerms bethe_terms(const FactorGraph& fg, const MessageState& state) {
  return bethe_terms(fg, variable_beliefs(fg, state), factor_beliefs(fg, state));
}

BpEstimate estimate_ln_count(const FactorGraph& fg, const BpOptions& opts) {
  opts.validate();
  BpEstimate result;
  MessageState state = init_messages(fg);
  std::vector<BetheTerms> trace;
  for (int it = 0; it < opts.max_iters; ++it) {
    MessageState next = damp(state, bp_step(fg, state), opts.damping);
    double delta = 0.0;
    for (std::size_t i = 0; i < next.v2f.size(); ++i) {
      delta = std::max(delta, std::abs(next.v2f[i] - state.v2f[i]));
      delta = std::max(delta, std::abs(next.f2v[i] - state.f2v[i]));
    }
    state = std::move(next);
    trace.push_back(bethe_terms(fg, state));
    result.iterations = it + 1;
    if (delta < opts.convergence_tol) {
      result.converged = true;
      break;
    }
  }
  result.summary = bethe_free_energy(fg, variable_beliefs(fg, state), factor_beliefs(fg, state));
  result.summary.per_iteration = std::move(trace);
  result.ln_z = -result.summary.F;
  result.final_state = std::move(state);
  return result;
}

}  // namespace bpgat
