#include "bpgat/model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bpgat/errors.hpp"
#include "bpgat/rng.hpp"

namespace bpgat {

using ad::ParamSet;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

template <class E, std::size_t N>
std::string enum_name(E value, const std::array<std::pair<E, const char*>, N>& table) {
  for (const auto& [e, name] : table)
    if (e == value) return name;
  throw InvalidArgument("unknown enum value");
}

template <class E, std::size_t N>
E enum_parse(const std::string& s, const std::array<std::pair<E, const char*>, N>& table, const char* what) {
  for (const auto& [e, name] : table)
    if (s == name) return e;
  std::string options;
  for (const auto& [e, name] : table) options += std::string(options.empty() ? "" : ", ") + name;
  throw InvalidArgument("unknown " + std::string(what) + " '" + s + "' (expected one of " + options + ")");
}

constexpr std::array<std::pair<Variant, const char*>, 6> kVariants{{
    {Variant::bpgat, "bpgat"},
    {Variant::bpnn, "bpnn"},
    {Variant::fvgat_vfnone, "fvgat_vfnone"},
    {Variant::fvnone_vfgat, "fvnone_vfgat"},
    {Variant::fvgat_vfmlp, "fvgat_vfmlp"},
    {Variant::fvmlp_vfgat, "fvmlp_vfgat"},
}};
constexpr std::array<std::pair<DampingMode, const char*>, 4> kDampingModes{{
    {DampingMode::delta_f2v, "delta_f2v"},
    {DampingMode::delta_v2f, "delta_v2f"},
    {DampingMode::delta_all, "delta_all"},
    {DampingMode::fixed_all, "fixed_all"},
}};
constexpr std::array<std::pair<Readout, const char*>, 2> kReadouts{{
    {Readout::mlp3, "mlp3"},
    {Readout::bethe_bypass, "bethe_bypass"},
}};
constexpr std::array<std::pair<InitKind, const char*>, 2> kInitKinds{{
    {InitKind::seeded_random, "seeded_random"},
    {InitKind::bp_identity, "bp_identity"},
}};

}  // namespace

std::string to_string(Variant v) { return enum_name(v, kVariants); }
std::string to_string(DampingMode m) { return enum_name(m, kDampingModes); }
std::string to_string(Readout r) { return enum_name(r, kReadouts); }
std::string to_string(InitKind k) { return enum_name(k, kInitKinds); }
Variant parse_variant(const std::string& s) { return enum_parse(s, kVariants, "variant"); }
DampingMode parse_damping_mode(const std::string& s) { return enum_parse(s, kDampingModes, "damping mode"); }
Readout parse_readout(const std::string& s) { return enum_parse(s, kReadouts, "readout"); }
InitKind parse_init_kind(const std::string& s) { return enum_parse(s, kInitKinds, "init"); }

// --- config -------------------------------------------------------------------

void ModelConfig::validate() const {
  if (T < 1) throw InvalidArgument("T must be >= 1");
  if (gat_heads.empty()) throw InvalidArgument("gat_heads must not be empty");
  for (int h : gat_heads)
    if (h < 1) throw InvalidArgument("every layer needs at least one attention head");
  if (gat_head_dim < 1) throw InvalidArgument("gat_head_dim must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
  if (mlp_hidden < 1) throw InvalidArgument("mlp_hidden must be >= 1");
  if (init == InitKind::bp_identity) {
    if (gat_head_dim < 2) throw InvalidArgument("bp_identity init needs gat_head_dim >= 2");
    if (mlp_hidden < 4) throw InvalidArgument("bp_identity init needs mlp_hidden >= 4");
  }
}

Transform ModelConfig::v2f_transform() const {
  switch (variant) {
    case Variant::bpgat:
    case Variant::fvnone_vfgat:
    case Variant::fvmlp_vfgat:
      return Transform::gat;
    case Variant::bpnn:
    case Variant::fvgat_vfmlp:
      return Transform::mlp;
    case Variant::fvgat_vfnone:
      return Transform::bp;
  }
  throw InvalidArgument("unknown variant");
}

Transform ModelConfig::f2v_transform() const {
  switch (variant) {
    case Variant::bpgat:
    case Variant::fvgat_vfnone:
    case Variant::fvgat_vfmlp:
      return Transform::gat;
    case Variant::bpnn:
    case Variant::fvmlp_vfgat:
      return Transform::mlp;
    case Variant::fvnone_vfgat:
      return Transform::bp;
  }
  throw InvalidArgument("unknown variant");
}

bool ModelConfig::delta_on_v2f() const {
  return damping_mode == DampingMode::delta_v2f || damping_mode == DampingMode::delta_all;
}

bool ModelConfig::delta_on_f2v() const {
  return damping_mode == DampingMode::delta_f2v || damping_mode == DampingMode::delta_all;
}

std::size_t ModelConfig::gat_in_dim(std::size_t layer) const {
  return layer == 0 ? 2 : static_cast<std::size_t>(gat_heads[layer - 1] * gat_head_dim);
}

std::size_t ModelConfig::gat_out_dim(std::size_t layer) const {
  return layer + 1 == gat_layers() ? 2 : static_cast<std::size_t>(gat_head_dim);
}

namespace {

using ShapeMap = std::map<std::string, std::vector<std::size_t>>;

void add_mlp_shapes(ShapeMap& shapes, const std::string& prefix, std::size_t in, std::size_t hidden,
                    std::size_t out) {
  const std::size_t dims[4] = {in, hidden, hidden, out};
  for (int l = 0; l < 3; ++l) {
    std::string p = prefix + ".l" + std::to_string(l);
    shapes[p + ".W"] = {dims[l], dims[l + 1]};
    shapes[p + ".b"] = {1, dims[l + 1]};
  }
}

std::string head_prefix(const std::string& dir, std::size_t layer) {
  return dir + ".gat.l" + std::to_string(layer + 1);
}

}  // namespace

std::map<std::string, std::vector<std::size_t>> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  ShapeMap shapes;
  const auto hidden = static_cast<std::size_t>(cfg.mlp_hidden);
  auto add_direction = [&](const std::string& dir, Transform t, bool delta) {
    if (t == Transform::gat) {
      for (std::size_t l = 0; l < cfg.gat_layers(); ++l) {
        for (int h = 0; h < cfg.gat_heads[l]; ++h) {
          std::string p = head_prefix(dir, l) + ".h" + std::to_string(h);
          shapes[p + ".W"] = {cfg.gat_in_dim(l), cfg.gat_out_dim(l)};
          shapes[p + ".a"] = {2 * cfg.gat_out_dim(l), 1};
        }
      }
    } else if (t == Transform::mlp) {
      add_mlp_shapes(shapes, dir + ".mlp", 2, hidden, 2);
    }
    if (delta) add_mlp_shapes(shapes, dir + ".delta", 2, hidden, 2);
  };
  add_direction("v2f", cfg.v2f_transform(), cfg.delta_on_v2f());
  add_direction("f2v", cfg.f2v_transform(), cfg.delta_on_f2v());
  if (cfg.readout == Readout::mlp3) {
    add_mlp_shapes(shapes, "readout", 3 * static_cast<std::size_t>(cfg.T), hidden, 1);
  }
  return shapes;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// relu(x) - relu(-x) == x: the first layer emits [x, -x], the middle layer
// passes those four units through, the last layer recombines them.
void set_identity_mlp(ParamSet& params, const std::string& prefix) {
  Tensor& w0 = params.at(prefix + ".l0.W");
  Tensor& w1 = params.at(prefix + ".l1.W");
  Tensor& w2 = params.at(prefix + ".l2.W");
  for (std::size_t i = 0; i < 2; ++i) {
    w0(i, i) = 1.0;
    w0(i, i + 2) = -1.0;
    w2(i, i) = 1.0;
    w2(i + 2, i) = -1.0;
  }
  for (std::size_t i = 0; i < 4; ++i) w1(i, i) = 1.0;
}

// Same trick for the readout: a hidden pair carries +-(sum of the last
// iteration's three features).
void set_bethe_readout(ParamSet& params, std::size_t n_features) {
  Tensor& w0 = params.at("readout.l0.W");
  Tensor& w1 = params.at("readout.l1.W");
  Tensor& w2 = params.at("readout.l2.W");
  for (std::size_t r = n_features - 3; r < n_features; ++r) {
    w0(r, 0) = 1.0;
    w0(r, 1) = -1.0;
  }
  w1(0, 0) = 1.0;
  w1(1, 1) = 1.0;
  w2(0, 0) = 1.0;
  w2(1, 0) = -1.0;
}

}  // namespace

ad::ParamSet init_params(const ModelConfig& cfg) {
  const ShapeMap shapes = parameter_shapes(cfg);
  ParamSet params;
  for (const auto& [name, shape] : shapes) params.emplace(name, Tensor(shape, 0.0));

  if (cfg.init == InitKind::seeded_random) {
    Rng rng(cfg.init_seed);
    for (auto& [name, tensor] : params) {
      std::size_t fan_in = tensor.rows();
      if (ends_with(name, ".b")) fan_in = shapes.at(name.substr(0, name.size() - 2) + ".W")[0];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : tensor.values()) v = rng.uniform_real(-bound, bound);
    }
    return params;
  }

  for (auto& [name, tensor] : params) {
    if (ends_with(name, ".W") && name.find(".gat.") != std::string::npos) {
      tensor(0, 0) = 1.0;
      tensor(1, 1) = 1.0;
    }
  }
  for (const char* dir : {"v2f", "f2v"}) {
    for (const char* kind : {".mlp", ".delta"}) {
      std::string prefix = std::string(dir) + kind;
      if (params.count(prefix + ".l0.W")) set_identity_mlp(params, prefix);
    }
  }
  if (cfg.readout == Readout::mlp3) set_bethe_readout(params, 3 * static_cast<std::size_t>(cfg.T));
  return params;
}

void check_params(const ModelConfig& cfg, const ad::ParamSet& params) {
  const ShapeMap shapes = parameter_shapes(cfg);
  for (const auto& [name, shape] : shapes) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigMismatch("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ConfigMismatch("parameter '" + name + "' has shape " + ad::shape_string(it->second.shape()) +
                           ", config needs " + ad::shape_string(shape));
    }
  }
  for (const auto& [name, tensor] : params) {
    if (!shapes.count(name)) throw ConfigMismatch("unexpected parameter '" + name + "'");
  }
}

// --- layers ---------------------------------------------------------------------

namespace {

// Row-wise dot products of M with v.
std::vector<double> row_dots(const Tensor& m, const double* v) {
  const std::size_t d = m.cols();
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = m.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) out[i] += v[j] * row[j];
  }
  return out;
}

}  // namespace

ad::Var attention_head(ad::Var self_proj, ad::Var other_proj, ad::Var a, const PairIndex& pairs, bool aggregate,
                       std::vector<double>* coefficients) {
  constexpr double kSlope = 0.2;
  const Tensor& S = self_proj.value();
  const Tensor& O = other_proj.value();
  const Tensor& A = a.value();
  const std::size_t d = S.cols();
  const std::size_t n_pairs = pairs.target.size();
  if (O.cols() != d || A.rows() != 2 * d || A.cols() != 1) throw ShapeError("attention_head: shape mismatch");
  if (pairs.source.size() != n_pairs) throw ShapeError("pair lists differ in length");
  if (S.rows() != pairs.n_targets) throw ShapeError("attention_head: self rows do not match targets");
  const std::span<const std::uint32_t> tgt = pairs.target;
  const std::span<const std::uint32_t> src = pairs.source;

  // The score splits into a per-target and a per-source term.
  const std::vector<double> self_score = row_dots(S, A.data());
  const std::vector<double> other_score = row_dots(O, A.data() + d);
  std::vector<double> pre(n_pairs), coeff(n_pairs), weight(n_pairs);
  std::uint32_t prev = 0;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::uint32_t t = tgt[p];
    if (t >= pairs.n_targets || src[p] >= O.rows()) throw ShapeError("attention_head: pair index out of range");
    if (t < prev) throw ShapeError("attention_head: targets not sorted");
    prev = t;
    const double z = self_score[t] + other_score[src[p]];
    pre[p] = z > 0 ? z : kSlope * z;
  }
  for (std::size_t b = 0; b < n_pairs;) {
    std::size_t e = b;
    double hi = -std::numeric_limits<double>::infinity();
    for (; e < n_pairs && tgt[e] == tgt[b]; ++e) hi = std::max(hi, pre[e]);
    double z = 0.0;
    for (std::size_t i = b; i < e; ++i) z += (coeff[i] = std::exp(pre[i] - hi));
    const double n = static_cast<double>(e - b);
    for (std::size_t i = b; i < e; ++i) {
      coeff[i] /= z;
      weight[i] = n * coeff[i];
    }
    b = e;
  }
  if (coefficients) *coefficients = coeff;

  Tensor out = aggregate ? Tensor::zeros(pairs.n_targets, d) : Tensor::zeros(n_pairs, d);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    double* row = out.data() + (aggregate ? tgt[p] : p) * d;
    const double* orow = O.data() + src[p] * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += weight[p] * orow[j];
  }

  return self_proj.tape().record(
      std::move(out), {self_proj, other_proj, a},
      [tgt, src, pre = std::move(pre), coeff = std::move(coeff),
       weight = std::move(weight), aggregate, d](const ad::BackwardContext& c) {
        const Tensor& S = *c.inputs[0];
        const Tensor& O = *c.inputs[1];
        const Tensor& A = *c.inputs[2];
        Tensor* gS = c.input_grads[0];
        Tensor* gO = c.input_grads[1];
        Tensor* gA = c.input_grads[2];
        const std::size_t n_pairs = tgt.size();
        // d loss / d coefficient (scaled by n_t), then through softmax and leaky ReLU
        // down to one scalar per target row and per source row.
        std::vector<double> g_coeff(n_pairs);
        for (std::size_t p = 0; p < n_pairs; ++p) {
          const double* gy = c.grad_out.data() + (aggregate ? tgt[p] : p) * d;
          const double* orow = O.data() + src[p] * d;
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += gy[j] * orow[j];
          g_coeff[p] = dot * (weight[p] / coeff[p]);
          if (gO) {
            double* go = gO->data() + src[p] * d;
            for (std::size_t j = 0; j < d; ++j) go[j] += weight[p] * gy[j];
          }
        }
        std::vector<double> g_self(S.rows(), 0.0), g_other(O.rows(), 0.0);
        for (std::size_t b = 0; b < n_pairs;) {
          std::size_t e = b;
          double mix = 0.0;
          for (; e < n_pairs && tgt[e] == tgt[b]; ++e) mix += coeff[e] * g_coeff[e];
          for (std::size_t p = b; p < e; ++p) {
            const double g_pre = coeff[p] * (g_coeff[p] - mix) * (pre[p] > 0 ? 1.0 : kSlope);
            g_self[tgt[p]] += g_pre;
            g_other[src[p]] += g_pre;
          }
          b = e;
        }
        auto spread = [d](const std::vector<double>& g, const Tensor& rows, const double* a_part, Tensor* grad,
                          double* grad_a) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (g[i] == 0.0) continue;
            const double* row = rows.data() + i * d;
            if (grad)
              for (std::size_t j = 0; j < d; ++j) grad->data()[i * d + j] += g[i] * a_part[j];
            if (grad_a)
              for (std::size_t j = 0; j < d; ++j) grad_a[j] += g[i] * row[j];
          }
        };
        spread(g_self, S, A.data(), gS, gA ? gA->data() : nullptr);
        spread(g_other, O, A.data() + d, gO, gA ? gA->data() + d : nullptr);
      });
}

AttentionOutput gat_attention_layer(ad::Tape& tape, const ad::ParamSet& params, const std::string& prefix,
                                    int heads, bool last, ad::Var self_rows, ad::Var other_rows,
                                    const PairIndex& pairs) {
  if (pairs.target.size() != pairs.source.size()) throw ShapeError("pair lists differ in length");
  if (self_rows.rows() != pairs.n_targets) {
    throw ShapeError(prefix + ": " + std::to_string(self_rows.rows()) + " self rows for " +
                     std::to_string(pairs.n_targets) + " targets");
  }

  AttentionOutput out;
  std::vector<Var> head_out, projected;
  for (int h = 0; h < heads; ++h) {
    const std::string p = prefix + ".h" + std::to_string(h);
    Var w = tape.parameter(params, p + ".W");
    Var a = tape.parameter(params, p + ".a");
    if (w.rows() != self_rows.cols() || w.rows() != other_rows.cols()) {
      throw ShapeError(p + ".W expects " + std::to_string(w.rows()) + " input columns");
    }
    if (a.rows() != 2 * w.cols() || a.cols() != 1) throw ShapeError(p + ".a does not match " + p + ".W");

    Var self_proj = ad::matmul(self_rows, w);
    Var other_proj = ad::matmul(other_rows, w);
    std::vector<double> coeff;
    head_out.push_back(attention_head(self_proj, other_proj, a, pairs, !last, &coeff));
    const std::size_t n_coeff = coeff.size();
    out.coefficients.push_back(Tensor::matrix(n_coeff, 1, std::move(coeff)));
    projected.push_back(other_proj);
  }

  if (!last) {
    out.aggregate = ad::concat(head_out, 1);
    out.self_next = ad::leaky_relu(out.aggregate);
    out.other_next = ad::concat(projected, 1);
    return out;
  }
  Var acc = head_out.front();
  for (std::size_t i = 1; i < head_out.size(); ++i) acc = ad::add(acc, head_out[i]);
  if (head_out.size() > 1) acc = ad::mul_scalar(acc, 1.0 / static_cast<double>(head_out.size()));
  out.pair_rows = acc;
  out.aggregate = ad::segment_sum(acc, pairs.target, pairs.n_targets);
  return out;
}

namespace {

AttentionOutput gat_stack(Tape& tape, const ParamSet& params, const ModelConfig& cfg, const std::string& dir,
                          Var self_rows, Var other_rows, const PairIndex& pairs) {
  for (std::size_t l = 0;; ++l) {
    const bool last = l + 1 == cfg.gat_layers();
    AttentionOutput out =
        gat_attention_layer(tape, params, head_prefix(dir, l), cfg.gat_heads[l], last, self_rows, other_rows, pairs);
    if (last) return out;
    self_rows = out.self_next;
    other_rows = out.other_next;
  }
}

}  // namespace

ad::Var mlp(ad::Tape& tape, const ad::ParamSet& params, const std::string& prefix, ad::Var x) {
  for (int l = 0; l < 3; ++l) {
    std::string p = prefix + ".l" + std::to_string(l);
    x = ad::add_row(ad::matmul(x, tape.parameter(params, p + ".W")), tape.parameter(params, p + ".b"));
    if (l < 2) x = ad::relu(x);
  }
  return x;
}

ad::Var factor_lse(ad::Tape& tape, const FactorGraph& fg, ad::Var pair_msgs) {
  const Tensor& msgs = pair_msgs.value();
  if (msgs.rows() != fg.f2v_pair_source().size() || msgs.cols() != 2) {
    throw ShapeError("factor_lse: expected (" + std::to_string(fg.f2v_pair_source().size()) + " x 2) pair rows, got " +
                     ad::shape_string(msgs.shape()));
  }
  const auto& offsets = fg.f2v_pair_offsets();
  auto row_of = [&offsets](const Factor& f, std::size_t s, std::size_t t) {
    return offsets[f.first_edge + s] + (t < s ? t : t - 1);
  };
  Tensor out = Tensor::zeros(fg.n_edges(), 2);
  std::vector<double> scratch;
  for (const auto& f : fg.factors()) {
    marginalize_factor(
        f, [&](std::size_t s, std::size_t t) { return msgs.data() + 2 * row_of(f, s, t); },
        out.data() + 2 * f.first_edge, scratch);
  }
  return tape.record(std::move(out), {pair_msgs}, [&fg, row_of](const ad::BackwardContext& c) {
    const Tensor& msgs = *c.inputs[0];
    Tensor& grad = *c.input_grads[0];
    for (const auto& f : fg.factors()) {
      marginalize_factor_backward(
          f, [&](std::size_t s, std::size_t t) { return msgs.data() + 2 * row_of(f, s, t); },
          c.out.data() + 2 * f.first_edge, c.grad_out.data() + 2 * f.first_edge,
          [&](std::size_t s, std::size_t t) { return grad.data() + 2 * row_of(f, s, t); });
    }
  });
}

namespace {

// Log-beliefs of one factor from its incoming variable-to-factor messages.
void factor_log_beliefs(const Factor& f, const double* v2f, std::vector<double>& lb) {
  lb.resize(f.table_size());
  for (std::size_t a = 0; a < lb.size(); ++a) {
    double v = f.log_table[a];
    for (std::size_t s = 0; s < f.arity(); ++s) v += v2f[2 * (f.first_edge + s) + ((a >> s) & 1u)];
    lb[a] = v;
  }
  const double z = log_sum_exp(lb);
  for (double& v : lb) v -= z;
}

std::array<double, 2> var_log_beliefs(const FactorGraph& fg, std::size_t var, const double* f2v) {
  double l0 = 0.0, l1 = 0.0;
  for (auto e : fg.var_edges(var)) {
    l0 += f2v[2 * e];
    l1 += f2v[2 * e + 1];
  }
  const double z = log_sum_exp2(l0, l1);
  return {l0 - z, l1 - z};
}

double x_log_x(double lb) {
  double b = std::exp(lb);
  return b > 0.0 ? b * lb : 0.0;
}

// Bethe quantities of a clause-form factor without enumerating its table.
// The belief is b(a) = prod_s q_s(a_s) w(a) / D, where q_s is slot s's
// normalised incoming message, w is 1 except e^c on the falsifying entry, and
// D = 1 - e^R (1 - e^c) with R = sum_s ln q_s(falsifying value).
struct ClauseBelief {
  std::vector<double> log_q;     // 2k, per slot and value
  std::vector<double> marginal;  // 2k, slot marginals of b
  std::vector<double> log_false; // k, ln q_s at the falsifying value
  double log_all_false = 0.0;    // R
  double log_norm = 0.0;         // ln D
  double false_belief = 0.0;     // b at the falsifying entry
  double neg_entropy = 0.0;      // sum_a b ln b

  ClauseBelief(const Factor& f, const double* v2f) {
    const std::size_t k = f.arity();
    const auto bad = static_cast<std::size_t>(f.falsifying);
    const double c = f.log_table[bad];
    log_q.resize(2 * k);
    marginal.resize(2 * k);
    log_false.resize(k);
    for (std::size_t s = 0; s < k; ++s) {
      const double* u = v2f + 2 * (f.first_edge + s);
      log_q[2 * s] = log_normalized(u[0], u[1]);
      log_q[2 * s + 1] = log_normalized(u[1], u[0]);
      log_false[s] = log_q[2 * s + ((bad >> s) & 1u)];
      log_all_false += log_false[s];
    }
    const double norm = clause_slack(log_all_false, c);
    log_norm = std::log(norm);
    false_belief = std::exp(c + log_all_false - log_norm);
    neg_entropy = false_belief * c - log_norm;
    for (std::size_t s = 0; s < k; ++s) {
      // The falsifying value keeps q_s times the slack of the other slots;
      // summing the rest directly avoids cancellation in R - ln q_s.
      double others = 0.0;
      for (std::size_t t = 0; t < k; ++t)
        if (t != s) others += log_false[t];
      const auto x_bad = (bad >> s) & 1u;
      marginal[2 * s + x_bad] = std::exp(log_q[2 * s + x_bad]) * clause_slack(others, c) / norm;
      marginal[2 * s + 1 - x_bad] = std::exp(log_q[2 * s + 1 - x_bad]) / norm;
      for (std::size_t v = 0; v < 2; ++v) neg_entropy += marginal[2 * s + v] * log_q[2 * s + v];
    }
  }
};

}  // namespace

ad::Var bethe_features(ad::Tape& tape, const FactorGraph& fg, ad::Var v2f, ad::Var f2v) {
  const std::size_t rows = fg.n_edges();
  if (v2f.rows() != rows || v2f.cols() != 2 || f2v.rows() != rows || f2v.cols() != 2) {
    throw ShapeError("bethe_features: message tensors must be (" + std::to_string(rows) + " x 2)");
  }
  const double* vf = v2f.value().data();
  const double* fv = f2v.value().data();
  double expectation = 0.0, factor_entropy = 0.0, var_entropy = 0.0;
  std::vector<double> lb;
  for (const auto& f : fg.factors()) {
    if (f.falsifying >= 0) {
      ClauseBelief cb(f, vf);
      if (cb.false_belief >= kBeliefMaskThreshold) expectation += cb.false_belief * f.log_table[f.falsifying];
      factor_entropy -= cb.neg_entropy;
      continue;
    }
    factor_log_beliefs(f, vf, lb);
    for (std::size_t a = 0; a < lb.size(); ++a) {
      double b = std::exp(lb[a]);
      if (b >= kBeliefMaskThreshold) expectation += b * f.log_table[a];
      factor_entropy -= x_log_x(lb[a]);
    }
  }
  for (std::size_t i = 0; i < fg.n_vars(); ++i) {
    auto l = var_log_beliefs(fg, i, fv);
    var_entropy += (static_cast<double>(fg.degree(i)) - 1.0) * (x_log_x(l[0]) + x_log_x(l[1]));
  }
  Tensor out = Tensor::matrix(1, 3, {expectation, factor_entropy, var_entropy});

  return tape.record(std::move(out), {v2f, f2v}, [&fg](const ad::BackwardContext& c) {
    const double g_expect = c.grad_out[0], g_fent = c.grad_out[1], g_vent = c.grad_out[2];
    if (Tensor* grad = c.input_grads[0]) {
      const double* vf = c.inputs[0]->data();
      std::vector<double> lb, b;
      for (const auto& f : fg.factors()) {
        if (f.falsifying >= 0) {
          // Per slot s and value v, with kappa = e^R (1 - e^c) / D and
          // A_t = sum_w q_t(w) ln q_t(w):
          //   d(sum b ln b)/du_s(v) = q_s(v)/D (sum_t A_t - A_s) - [v bad] kappa (R - ln q_s(bad))
          //                           + b_s(v) ln q_s(v) + [v bad] b_bad c - b_s(v) (ln D + sum b ln b)
          //   d(b_bad c)/du_s(v)    = c b_bad ([v bad] - b_s(v))
          ClauseBelief cb(f, vf);
          const std::size_t k = f.arity();
          const auto bad = static_cast<std::size_t>(f.falsifying);
          const double tc = f.log_table[bad];
          const double masked_c = cb.false_belief >= kBeliefMaskThreshold ? tc : 0.0;
          const double kappa = std::exp(cb.log_all_false - cb.log_norm) * -std::expm1(tc);
          std::vector<double> slot_neg_entropy(k);
          double total_neg_entropy = 0.0;
          for (std::size_t s = 0; s < k; ++s) {
            slot_neg_entropy[s] = std::exp(cb.log_q[2 * s]) * cb.log_q[2 * s] +
                                  std::exp(cb.log_q[2 * s + 1]) * cb.log_q[2 * s + 1];
            total_neg_entropy += slot_neg_entropy[s];
          }
          const double inv_norm = std::exp(-cb.log_norm);
          for (std::size_t s = 0; s < k; ++s) {
            double others_false = 0.0;
            for (std::size_t t = 0; t < k; ++t)
              if (t != s) others_false += cb.log_false[t];
            for (std::size_t v = 0; v < 2; ++v) {
              const bool is_bad = v == ((bad >> s) & 1u);
              const double bs = cb.marginal[2 * s + v];
              double d_neg_entropy = std::exp(cb.log_q[2 * s + v]) * inv_norm * (total_neg_entropy - slot_neg_entropy[s]) +
                                     bs * cb.log_q[2 * s + v] - bs * (cb.log_norm + cb.neg_entropy);
              if (is_bad) d_neg_entropy += cb.false_belief * tc - kappa * others_false;
              const double centred = is_bad ? cb.marginal[2 * s + 1 - v] : -bs;
              const double d_expect = masked_c * cb.false_belief * centred;
              (*grad)[2 * (f.first_edge + s) + v] += g_expect * d_expect - g_fent * d_neg_entropy;
            }
          }
          continue;
        }
        factor_log_beliefs(f, vf, lb);
        b.resize(lb.size());
        double mean_energy = 0.0, entropy = 0.0;
        for (std::size_t a = 0; a < lb.size(); ++a) {
          b[a] = std::exp(lb[a]);
          if (b[a] >= kBeliefMaskThreshold) mean_energy += b[a] * f.log_table[a];
          if (b[a] > 0.0) entropy -= b[a] * lb[a];
        }
        for (std::size_t a = 0; a < lb.size(); ++a) {
          if (b[a] == 0.0) continue;
          double masked = b[a] >= kBeliefMaskThreshold ? f.log_table[a] : 0.0;
          double dz = g_expect * b[a] * (masked - mean_energy) - g_fent * b[a] * (lb[a] + entropy);
          for (std::size_t s = 0; s < f.arity(); ++s) (*grad)[2 * (f.first_edge + s) + ((a >> s) & 1u)] += dz;
        }
      }
    }
    if (Tensor* grad = c.input_grads[1]) {
      const double* fv = c.inputs[1]->data();
      for (std::size_t i = 0; i < fg.n_vars(); ++i) {
        const double coeff = static_cast<double>(fg.degree(i)) - 1.0;
        if (coeff == 0.0) continue;
        auto l = var_log_beliefs(fg, i, fv);
        const double neg_entropy = x_log_x(l[0]) + x_log_x(l[1]);
        double dz[2];
        for (int x = 0; x < 2; ++x) dz[x] = g_vent * coeff * std::exp(l[x]) * (l[x] - neg_entropy);
        for (auto e : fg.var_edges(i)) {
          (*grad)[2 * e] += dz[0];
          (*grad)[2 * e + 1] += dz[1];
        }
      }
    }
  });
}

// --- message passing ------------------------------------------------------------

Messages initial_messages(ad::Tape& tape, const FactorGraph& fg) {
  const double uniform = -std::log(2.0);
  return {tape.constant(Tensor({fg.n_edges(), 2}, uniform)), tape.constant(Tensor({fg.n_edges(), 2}, uniform))};
}

ad::Var v2f_update(ad::Tape& tape, const FactorGraph& fg, const ad::ParamSet& params, const ModelConfig& cfg,
                   const Messages& state) {
  Var by_position;
  const Transform t = cfg.v2f_transform();
  if (t == Transform::gat) {
    PairIndex pairs{fg.v2f_pair_target(), fg.v2f_pair_source(), fg.n_edges()};
    Var self_rows = ad::gather_rows(state.v2f, fg.var_order());
    by_position = gat_stack(tape, params, cfg, "v2f", self_rows, state.f2v, pairs).aggregate;
  } else {
    Var incoming = t == Transform::mlp ? mlp(tape, params, "v2f.mlp", state.f2v) : state.f2v;
    by_position = ad::segment_sum(ad::gather_rows(incoming, fg.v2f_pair_source()), fg.v2f_pair_target(),
                                  fg.n_edges());
  }
  return ad::log_normalize_rows(ad::gather_rows(by_position, fg.var_order_position()));
}

ad::Var f2v_update(ad::Tape& tape, const FactorGraph& fg, const ad::ParamSet& params, const ModelConfig& cfg,
                   const Messages& state) {
  Var pair_msgs;
  const Transform t = cfg.f2v_transform();
  if (t == Transform::gat) {
    PairIndex pairs{fg.f2v_pair_target(), fg.f2v_pair_source(), fg.n_edges()};
    pair_msgs = gat_stack(tape, params, cfg, "f2v", state.f2v, state.v2f, pairs).pair_rows;
  } else {
    Var incoming = t == Transform::mlp ? mlp(tape, params, "f2v.mlp", state.v2f) : state.v2f;
    pair_msgs = ad::gather_rows(incoming, fg.f2v_pair_source());
  }
  return ad::log_normalize_rows(factor_lse(tape, fg, pair_msgs));
}

Messages apply_damping(ad::Tape& tape, const ad::ParamSet& params, const ModelConfig& cfg, const Messages& prev,
                       const Messages& next) {
  auto blend = [&](Var old_msg, Var new_msg, bool learned, const std::string& dir) {
    Var mixed;
    if (learned) {
      mixed = ad::add(old_msg, mlp(tape, params, dir + ".delta", ad::sub(new_msg, old_msg)));
    } else {
      mixed = ad::add(ad::mul_scalar(new_msg, cfg.alpha), ad::mul_scalar(old_msg, 1.0 - cfg.alpha));
    }
    return ad::log_normalize_rows(mixed);
  };
  return {blend(prev.v2f, next.v2f, cfg.delta_on_v2f(), "v2f"), blend(prev.f2v, next.f2v, cfg.delta_on_f2v(), "f2v")};
}

ad::Var readout(ad::Tape& tape, const ad::ParamSet& params, const ModelConfig& cfg,
                const std::vector<ad::Var>& features) {
  if (features.size() != static_cast<std::size_t>(cfg.T)) {
    throw ShapeError("readout expects " + std::to_string(cfg.T) + " feature rows, got " +
                     std::to_string(features.size()));
  }
  if (cfg.readout == Readout::bethe_bypass) return ad::sum(features.back());
  return mlp(tape, params, "readout", ad::concat(features, 1));
}

ForwardGraph forward_graph(ad::Tape& tape, const FactorGraph& fg, const ad::ParamSet& params,
                           const ModelConfig& cfg) {
  check_params(cfg, params);
  ForwardGraph out;
  Messages state = initial_messages(tape, fg);
  for (int k = 0; k < cfg.T; ++k) {
    Messages next{v2f_update(tape, fg, params, cfg, state), f2v_update(tape, fg, params, cfg, state)};
    state = apply_damping(tape, params, cfg, state, next);
    out.features.push_back(bethe_features(tape, fg, state.v2f, state.f2v));
  }
  out.ln_z = readout(tape, params, cfg, out.features);
  return out;
}

Prediction forward(const FactorGraph& fg, const ad::ParamSet& params, const ModelConfig& cfg) {
  Tape tape;
  ForwardGraph g = forward_graph(tape, fg, params, cfg);
  Prediction p;
  p.ln_z = g.ln_z.value().item();
  for (const auto& f : g.features) {
    const Tensor& v = f.value();
    p.trace.push_back(BetheTerms{v[0], v[1], v[2]});
  }
  return p;
}

// --- checkpoints ----------------------------------------------------------------

std::string format_double(double v) {
  if (!std::isfinite(v)) throw InvalidArgument("cannot serialise a non-finite value");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["variant"] = to_string(cfg.variant);
  j["T"] = cfg.T;
  j["gat_heads"] = cfg.gat_heads;
  j["gat_head_dim"] = cfg.gat_head_dim;
  j["damping_mode"] = to_string(cfg.damping_mode);
  j["alpha"] = cfg.alpha;
  j["readout"] = to_string(cfg.readout);
  j["mlp_hidden"] = cfg.mlp_hidden;
  j["init"] = {{"kind", to_string(cfg.init)}, {"seed", cfg.init_seed}};
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
    cfg.T = j.at("T").get<int>();
    cfg.gat_heads = j.at("gat_heads").get<std::vector<int>>();
    cfg.gat_head_dim = j.at("gat_head_dim").get<int>();
    cfg.damping_mode = parse_damping_mode(j.at("damping_mode").get<std::string>());
    cfg.alpha = j.at("alpha").get<double>();
    cfg.readout = parse_readout(j.at("readout").get<std::string>());
    cfg.mlp_hidden = j.at("mlp_hidden").get<int>();
    cfg.init = parse_init_kind(j.at("init").at("kind").get<std::string>());
    cfg.init_seed = j.at("init").at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  check_params(ckpt.config, ckpt.params);
  std::ostringstream out;
  out << "{\n\"config\": " << config_to_json(ckpt.config).dump() << ",\n\"params\": {";
  bool first = true;
  for (const auto& [name, tensor] : ckpt.params) {
    out << (first ? "\n" : ",\n") << nlohmann::json(name).dump() << ": {\"shape\": [";
    first = false;
    for (std::size_t i = 0; i < tensor.shape().size(); ++i) out << (i ? ", " : "") << tensor.shape()[i];
    out << "], \"values\": [";
    for (std::size_t i = 0; i < tensor.size(); ++i) out << (i ? ", " : "") << format_double(tensor[i]);
    out << "]}";
  }
  out << "\n},\n\"format_version\": 1\n}\n";
  return out.str();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || j["format_version"] != 1) {
    throw ParseError("checkpoint: missing or unsupported format_version");
  }
  if (!j.contains("config") || !j.contains("params") || !j["params"].is_object()) {
    throw ParseError("checkpoint: needs \"config\" and \"params\" objects");
  }
  Checkpoint ckpt;
  ckpt.config = config_from_json(j["config"]);
  try {
    for (const auto& [name, entry] : j["params"].items()) {
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      auto values = entry.at("values").get<std::vector<double>>();
      ckpt.params.emplace(name, Tensor(std::move(shape), std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint params: ") + e.what());
  } catch (const ShapeError& e) {
    throw ParseError(std::string("checkpoint params: ") + e.what());
  }
  check_params(ckpt.config, ckpt.params);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string text = checkpoint_to_json(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw InvalidArgument("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace bpgat
