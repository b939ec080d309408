#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bpgat/cnf.hpp"
#include "bpgat/rng.hpp"

namespace bpgat {

struct GenParams {
  int nv_min = 10;
  int nv_max = 30;
  int nc_min = 20;
  int nc_max = 50;
  double bern_p = 0.7;
  double geom_p = 0.4;
  int max_clause_len = 16;
  std::uint64_t seed = 0;

  // Throws InvalidArgument.
  void validate() const;
};

struct DatasetRecord {
  std::string id;
  CnfFormula formula;
  double ln_count = 0.0;

  std::uint32_t n_vars() const { return formula.n_vars; }
  std::size_t n_clauses() const { return formula.clauses.size(); }
};

using Dataset = std::vector<DatasetRecord>;

struct Graph {
  int n_nodes = 0;
  std::vector<std::pair<int, int>> edges;  // 1-based, u < v, lexicographic order

  std::size_t n_edges() const { return edges.size(); }
};

// k = 2 + Bernoulli(bern_p) + Geometric(geom_p), resampled while k > max_clause_len.
int sample_clause_length(const GenParams& params, Rng& rng);

struct SampledFormula {
  CnfFormula formula;
  // Set when a clause could not be made unique within 1000 draws and the
  // clause list was cut short.
  bool truncated = false;
};

SampledFormula sample_random_formula(const GenParams& params, Rng& rng);

struct LabelOptions {
  std::chrono::milliseconds count_budget{10000};
  // Labeling gives up (BudgetExhausted) after this many consecutive timeouts
  // or once total draws reach max_attempts.
  int max_consecutive_timeouts = 50;
  std::size_t max_attempts = 1000000;
};

// Draws candidates from `sample`, keeps SAT ones, labels them with count_dpll.
// Records are numbered by acceptance order: id = prefix + zero-padded index.
Dataset label_until(std::size_t target_count, const std::function<CnfFormula(Rng&)>& sample,
                    Rng& rng, const std::string& id_prefix, const LabelOptions& options = {});

Dataset build_labeled_dataset(const GenParams& params, std::size_t target_count, Rng& rng,
                              const LabelOptions& options = {});

Graph sample_erdos_renyi(int n, double p, Rng& rng);

// Variable (v-1)*k + c encodes "vertex v has colour c" (v, c 1-based).
CnfFormula encode_k_coloring(const Graph& g, int k);

Dataset build_coloring_dataset(int n_nodes, double edge_p, int k, std::size_t target_count,
                               Rng& rng, const LabelOptions& options = {});

// JSON-lines: {"id","dimacs","n_vars","n_clauses","ln_count"} per line.
void write_dataset(const Dataset& data, std::ostream& out);
void write_dataset_file(const Dataset& data, const std::string& path);
Dataset read_dataset(std::istream& in);
Dataset read_dataset_file(const std::string& path);

struct DatasetSummary {
  std::size_t count = 0;
  double mean_vars = 0.0;
  double mean_clauses = 0.0;
  double mean_ln_count = 0.0;
};

DatasetSummary summarize(const Dataset& data);

}  // namespace bpgat
