#pragma once

#include <array>
#include <vector>

#include "bpgat/factor_graph.hpp"

namespace bpgat {

// Per directed edge, length-2 log messages stored row-major (E x 2) in edge
// order. Each row is log-normalised: LSE(row) = 0.
struct MessageState {
  std::vector<double> v2f;
  std::vector<double> f2v;
  int iteration = 0;
};

// The three per-iteration Bethe quantities, each summed over the graph:
//   log_factor_expectation =  sum_j sum_a b_j(a) ln f_j(a)      (= -U)
//   factor_entropy         = -sum_j sum_a b_j(a) ln b_j(a)
//   var_entropy            =  sum_i (deg_i - 1) sum_x b_i(x) ln b_i(x)
// so that H = factor_entropy + var_entropy and -F = sum of all three.
struct BetheTerms {
  double log_factor_expectation = 0.0;
  double factor_entropy = 0.0;
  double var_entropy = 0.0;

  double neg_free_energy() const { return log_factor_expectation + factor_entropy + var_entropy; }
};

struct BetheSummary {
  double U = 0.0;  // Bethe average energy
  double H = 0.0;  // Bethe entropy
  double F = 0.0;  // U - H
  std::vector<BetheTerms> per_iteration;
};

struct BpOptions {
  int max_iters = 5;
  double damping = 0.5;  // weight of the new message
  double convergence_tol = 1e-8;

  void validate() const;
};

// Beliefs below this mass are treated as exactly zero when weighting ln f.
inline constexpr double kBeliefMaskThreshold = 1e-20;

MessageState init_messages(const FactorGraph& fg);

// One synchronous flooding update: both directions are computed from `state`.
MessageState bp_step(const FactorGraph& fg, const MessageState& state);

// alpha * next + (1 - alpha) * prev per entry, then row re-normalisation.
// Keeps next.iteration. Throws ShapeError on size mismatch.
MessageState damp(const MessageState& prev, const MessageState& next, double alpha);

// In-place LSE normalisation of an (n x 2) row-major buffer.
void log_normalize_rows(std::vector<double>& rows);

std::vector<std::array<double, 2>> variable_beliefs(const FactorGraph& fg, const MessageState& state);
std::vector<std::vector<double>> factor_beliefs(const FactorGraph& fg, const MessageState& state);

BetheTerms bethe_terms(const FactorGraph& fg, const std::vector<std::array<double, 2>>& var_beliefs,
                       const std::vector<std::vector<double>>& fac_beliefs);

BetheSummary bethe_free_energy(const FactorGraph& fg,
                               const std::vector<std::array<double, 2>>& var_beliefs,
                               const std::vector<std::vector<double>>& fac_beliefs);

BetheTerms bethe_terms(const FactorGraph& fg, const MessageState& state);

struct BpEstimate {
  double ln_z = 0.0;  // -F at the final state
  BetheSummary summary;
  bool converged = false;
  int iterations = 0;
  MessageState final_state;
};

// init, then up to max_iters rounds of bp_step + damp, stopping early once
// the largest absolute message change falls below convergence_tol.
BpEstimate estimate_ln_count(const FactorGraph& fg, const BpOptions& opts = {});

}  // namespace bpgat
