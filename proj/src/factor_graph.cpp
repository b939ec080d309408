#include "bpgat/factor_graph.hpp"

#include <numeric>

#include "bpgat/errors.hpp"

namespace bpgat {

FactorGraph FactorGraph::from_cnf(const CnfFormula& formula) {
  formula.validate();
  FactorGraph fg;
  fg.n_vars_ = formula.n_vars;

  std::uint32_t edge = 0;
  for (std::size_t j = 0; j < formula.clauses.size(); ++j) {
    const auto& clause = formula.clauses[j];
    if (clause.literals.empty()) {
      throw InvalidArgument("clause " + std::to_string(j + 1) + " is empty");
    }
    if (clause.literals.size() > kMaxFactorArity) {
      throw InstanceTooLarge("clause " + std::to_string(j + 1) + " has more than " +
                             std::to_string(kMaxFactorArity) + " literals");
    }
    Factor f;
    f.first_edge = edge;
    std::size_t falsifying = 0;
    for (std::size_t s = 0; s < clause.literals.size(); ++s) {
      const auto& lit = clause.literals[s];
      std::uint32_t var = lit.variable - 1;
      if (std::find(f.var_ids.begin(), f.var_ids.end(), var) != f.var_ids.end()) {
        throw InvalidArgument("clause " + std::to_string(j + 1) +
                              " repeats a variable; normalize the formula first");
      }
      f.var_ids.push_back(var);
      // The only falsifying local assignment sets every literal false.
      if (lit.negated) falsifying |= std::size_t{1} << s;
      fg.edges_.push_back(Edge{static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(s), var});
      ++edge;
    }
    f.log_table.assign(std::size_t{1} << f.arity(), 0.0);
    f.log_table[falsifying] = kNegSentinel;
    f.falsifying = static_cast<std::int64_t>(falsifying);
    fg.factors_.push_back(std::move(f));
  }

  const std::size_t n = fg.n_vars_;
  const std::size_t e_count = fg.edges_.size();
  fg.var_offsets_.assign(n + 1, 0);
  for (const auto& e : fg.edges_) ++fg.var_offsets_[e.var + 1];
  std::partial_sum(fg.var_offsets_.begin(), fg.var_offsets_.end(), fg.var_offsets_.begin());
  fg.var_order_.resize(e_count);
  fg.var_order_pos_.resize(e_count);
  {
    std::vector<std::uint32_t> cursor(fg.var_offsets_.begin(), fg.var_offsets_.end() - 1);
    for (std::uint32_t e = 0; e < e_count; ++e) {
      auto pos = cursor[fg.edges_[e].var]++;
      fg.var_order_[pos] = e;
      fg.var_order_pos_[e] = pos;
    }
  }

  fg.f2v_offsets_.assign(e_count + 1, 0);
  for (const auto& f : fg.factors_) {
    for (std::size_t s = 0; s < f.arity(); ++s) {
      auto target = f.first_edge + static_cast<std::uint32_t>(s);
      for (std::size_t t = 0; t < f.arity(); ++t) {
        if (t == s) continue;
        fg.f2v_target_.push_back(target);
        fg.f2v_source_.push_back(f.first_edge + static_cast<std::uint32_t>(t));
      }
      fg.f2v_offsets_[target + 1] = static_cast<std::uint32_t>(fg.f2v_target_.size());
    }
  }

  for (std::size_t v = 0; v < n; ++v) {
    auto incident = fg.var_edges(v);
    for (std::size_t a = 0; a < incident.size(); ++a) {
      auto target_pos = fg.var_offsets_[v] + static_cast<std::uint32_t>(a);
      for (std::size_t b = 0; b < incident.size(); ++b) {
        if (a == b) continue;
        fg.v2f_target_.push_back(target_pos);
        fg.v2f_source_.push_back(incident[b]);
      }
    }
  }
  return fg;
}

double partition_bruteforce(const FactorGraph& fg) {
  constexpr std::size_t kMaxVars = 20;
  const std::size_t n = fg.n_vars();
  if (n > kMaxVars) {
    throw InstanceTooLarge("partition_bruteforce supports at most 20 variables, got " +
                           std::to_string(n));
  }
  const std::uint64_t total = std::uint64_t{1} << n;
  std::vector<double> terms(total);
  for (std::uint64_t x = 0; x < total; ++x) {
    double log_weight = 0.0;
    for (const auto& f : fg.factors()) {
      std::size_t local = 0;
      for (std::size_t s = 0; s < f.arity(); ++s) {
        local |= static_cast<std::size_t>((x >> f.var_ids[s]) & 1u) << s;
      }
      log_weight += f.log_table[local];
    }
    terms[x] = log_weight;
  }
  return log_sum_exp(terms);
}

bool is_tree(const FactorGraph& fg) {
  const std::size_t nodes = fg.n_vars() + fg.n_factors();
  std::vector<std::size_t> parent(nodes);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  std::size_t components = nodes;
  for (const auto& e : fg.edges()) {
    auto a = find(e.var);
    auto b = find(fg.n_vars() + e.factor);
    if (a == b) return false;  // this edge closes a cycle
    parent[a] = b;
    --components;
  }
  return fg.n_edges() == nodes - components;
}

}  // namespace bpgat
