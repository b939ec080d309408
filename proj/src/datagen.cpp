#include "bpgat/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bpgat/errors.hpp"
#include "bpgat/exact_count.hpp"

namespace bpgat {

void GenParams::validate() const {
  if (nv_min < 1 || nv_max < nv_min) throw InvalidArgument("need 1 <= nv_min <= nv_max");
  if (nc_min < 1 || nc_max < nc_min) throw InvalidArgument("need 1 <= nc_min <= nc_max");
  if (!(bern_p > 0.0 && bern_p < 1.0)) throw InvalidArgument("bern_p must lie in (0, 1)");
  if (!(geom_p > 0.0 && geom_p < 1.0)) throw InvalidArgument("geom_p must lie in (0, 1)");
  if (max_clause_len < 3) throw InvalidArgument("max_clause_len must be >= 3");
}

int sample_clause_length(const GenParams& params, Rng& rng) {
  while (true) {
    std::int64_t k = 2 + (rng.bernoulli(params.bern_p) ? 1 : 0) + rng.geometric(params.geom_p);
    if (k <= params.max_clause_len) return static_cast<int>(k);
  }
}

SampledFormula sample_random_formula(const GenParams& params, Rng& rng) {
  params.validate();
  SampledFormula out;
  const int n_vars = static_cast<int>(rng.uniform_int(params.nv_min, params.nv_max));
  const int n_clauses = static_cast<int>(rng.uniform_int(params.nc_min, params.nc_max));
  out.formula.n_vars = static_cast<std::uint32_t>(n_vars);

  std::set<std::vector<Literal>> seen;
  std::vector<std::uint32_t> pool(static_cast<std::size_t>(n_vars));
  constexpr int kMaxRejections = 1000;

  for (int j = 0; j < n_clauses; ++j) {
    bool placed = false;
    for (int attempt = 0; attempt <= kMaxRejections && !placed; ++attempt) {
      const int k = std::min(sample_clause_length(params, rng), n_vars);
      std::iota(pool.begin(), pool.end(), 1u);
      Clause clause;
      for (int s = 0; s < k; ++s) {
        auto pick = static_cast<std::size_t>(rng.uniform_int(s, n_vars - 1));
        std::swap(pool[static_cast<std::size_t>(s)], pool[pick]);
        clause.literals.push_back(Literal{pool[static_cast<std::size_t>(s)], rng.bernoulli(0.5)});
      }
      auto key = clause.literals;
      std::sort(key.begin(), key.end());
      if (seen.insert(std::move(key)).second) {
        out.formula.clauses.push_back(std::move(clause));
        placed = true;
      }
    }
    if (!placed) {
      out.truncated = true;
      break;
    }
  }
  return out;
}

Dataset label_until(std::size_t target_count, const std::function<CnfFormula(Rng&)>& sample,
                    Rng& rng, const std::string& id_prefix, const LabelOptions& options) {
  if (target_count < 1) throw InvalidArgument("target_count must be >= 1");
  Dataset data;
  data.reserve(target_count);
  int consecutive_timeouts = 0;
  std::size_t attempts = 0;
  DpllOptions dpll;
  dpll.time_budget = options.count_budget;
  while (data.size() < target_count) {
    if (attempts++ >= options.max_attempts) {
      throw BudgetExhausted("labeling stopped after " + std::to_string(options.max_attempts) +
                            " draws with " + std::to_string(data.size()) + " records");
    }
    CnfFormula formula = sample(rng);
    try {
      ExactCount exact = count_dpll(formula, dpll);
      consecutive_timeouts = 0;
      if (!exact.satisfiable()) continue;
      char id[32];
      std::snprintf(id, sizeof id, "%06zu", data.size());
      data.push_back(DatasetRecord{id_prefix + id, std::move(formula), exact.ln_count});
    } catch (const Timeout&) {
      if (++consecutive_timeouts >= options.max_consecutive_timeouts) {
        throw BudgetExhausted("labeling timed out " + std::to_string(consecutive_timeouts) +
                              " times in a row");
      }
    }
  }
  return data;
}

Dataset build_labeled_dataset(const GenParams& params, std::size_t target_count, Rng& rng,
                              const LabelOptions& options) {
  params.validate();
  return label_until(
      target_count, [&](Rng& r) { return sample_random_formula(params, r).formula; }, rng, "rand-",
      options);
}

Graph sample_erdos_renyi(int n, double p, Rng& rng) {
  if (n < 1) throw InvalidArgument("graph needs at least one node");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("edge probability must lie in [0, 1]");
  Graph g;
  g.n_nodes = n;
  for (int u = 1; u <= n; ++u) {
    for (int v = u + 1; v <= n; ++v) {
      if (rng.bernoulli(p)) g.edges.emplace_back(u, v);
    }
  }
  return g;
}

CnfFormula encode_k_coloring(const Graph& g, int k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  auto var = [k](int v, int c) {
    return Literal{static_cast<std::uint32_t>((v - 1) * k + c), false};
  };
  auto neg = [](Literal l) {
    l.negated = true;
    return l;
  };
  CnfFormula f;
  f.n_vars = static_cast<std::uint32_t>(g.n_nodes * k);
  for (int v = 1; v <= g.n_nodes; ++v) {
    Clause at_least_one;
    for (int c = 1; c <= k; ++c) at_least_one.literals.push_back(var(v, c));
    f.clauses.push_back(std::move(at_least_one));
    for (int c = 1; c <= k; ++c) {
      for (int d = c + 1; d <= k; ++d) {
        f.clauses.push_back(Clause{{neg(var(v, c)), neg(var(v, d))}});
      }
    }
  }
  for (auto [u, v] : g.edges) {
    for (int c = 1; c <= k; ++c) {
      f.clauses.push_back(Clause{{neg(var(u, c)), neg(var(v, c))}});
    }
  }
  return f;
}

Dataset build_coloring_dataset(int n_nodes, double edge_p, int k, std::size_t target_count,
                               Rng& rng, const LabelOptions& options) {
  return label_until(
      target_count,
      [&](Rng& r) { return encode_k_coloring(sample_erdos_renyi(n_nodes, edge_p, r), k); }, rng,
      "color-", options);
}

void write_dataset(const Dataset& data, std::ostream& out) {
  for (const auto& rec : data) {
    nlohmann::ordered_json line;
    line["id"] = rec.id;
    line["dimacs"] = write_dimacs(rec.formula);
    line["n_vars"] = rec.n_vars();
    line["n_clauses"] = rec.n_clauses();
    line["ln_count"] = rec.ln_count;
    out << line.dump() << '\n';
  }
}

void write_dataset_file(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  write_dataset(data, out);
}

Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "dataset line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    }
    for (const char* key : {"id", "dimacs", "n_vars", "n_clauses", "ln_count"}) {
      if (!j.contains(key)) throw ParseError(where + "missing field '" + key + "'");
    }
    if (!j["id"].is_string() || !j["dimacs"].is_string() || !j["n_vars"].is_number_integer() ||
        !j["n_clauses"].is_number_integer() || !j["ln_count"].is_number()) {
      throw ParseError(where + "field has the wrong type");
    }
    DatasetRecord rec;
    rec.id = j["id"].get<std::string>();
    try {
      rec.formula = parse_dimacs(j["dimacs"].get<std::string>());
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    }
    rec.ln_count = j["ln_count"].get<double>();
    if (j["n_vars"].get<long>() != static_cast<long>(rec.n_vars()) ||
        j["n_clauses"].get<long>() != static_cast<long>(rec.n_clauses())) {
      throw ParseError(where + "n_vars/n_clauses disagree with the DIMACS payload");
    }
    if (!std::isfinite(rec.ln_count)) throw ParseError(where + "ln_count must be finite");
    data.push_back(std::move(rec));
  }
  return data;
}

Dataset read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read_dataset(in);
}

DatasetSummary summarize(const Dataset& data) {
  DatasetSummary s;
  s.count = data.size();
  if (data.empty()) return s;
  for (const auto& rec : data) {
    s.mean_vars += rec.n_vars();
    s.mean_clauses += static_cast<double>(rec.n_clauses());
    s.mean_ln_count += rec.ln_count;
  }
  const double n = static_cast<double>(data.size());
  s.mean_vars /= n;
  s.mean_clauses /= n;
  s.mean_ln_count /= n;
  return s;
}

}  // namespace bpgat
