#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bpgat/autodiff.hpp"
#include "bpgat/bp.hpp"
#include "bpgat/factor_graph.hpp"

namespace bpgat {

enum class Variant { bpgat, bpnn, fvgat_vfnone, fvnone_vfgat, fvgat_vfmlp, fvmlp_vfgat };
enum class DampingMode { delta_f2v, delta_v2f, delta_all, fixed_all };
enum class Readout { mlp3, bethe_bypass };
enum class InitKind { seeded_random, bp_identity };

// How one message direction transforms its incoming messages.
enum class Transform { bp, mlp, gat };

std::string to_string(Variant v);
std::string to_string(DampingMode m);
std::string to_string(Readout r);
std::string to_string(InitKind k);
// Throw InvalidArgument on unknown names.
Variant parse_variant(const std::string& s);
DampingMode parse_damping_mode(const std::string& s);
Readout parse_readout(const std::string& s);
InitKind parse_init_kind(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::bpgat;
  int T = 5;
  std::vector<int> gat_heads{4, 4, 6};
  int gat_head_dim = 2;
  DampingMode damping_mode = DampingMode::delta_f2v;
  double alpha = 0.5;
  Readout readout = Readout::mlp3;
  int mlp_hidden = 8;
  InitKind init = InitKind::seeded_random;
  std::uint64_t init_seed = 0;

  // Throws InvalidArgument.
  void validate() const;

  Transform v2f_transform() const;
  Transform f2v_transform() const;
  bool delta_on_v2f() const;
  bool delta_on_f2v() const;

  // Attention layer geometry. The last layer always emits 2 columns per head.
  std::size_t gat_layers() const { return gat_heads.size(); }
  std::size_t gat_in_dim(std::size_t layer) const;
  std::size_t gat_out_dim(std::size_t layer) const;

  bool operator==(const ModelConfig&) const = default;
};

// Name -> shape of every tensor the config needs.
std::map<std::string, std::vector<std::size_t>> parameter_shapes(const ModelConfig& cfg);

ad::ParamSet init_params(const ModelConfig& cfg);

// Throws ConfigMismatch when a tensor is missing, extra, or misshapen.
void check_params(const ModelConfig& cfg, const ad::ParamSet& params);

// --- differentiable building blocks ---------------------------------------

// Pairs (target, source) grouped by ascending target id.
struct PairIndex {
  std::span<const std::uint32_t> target;
  std::span<const std::uint32_t> source;
  std::size_t n_targets = 0;
};

struct AttentionOutput {
  ad::Var self_next;   // input rows for the next layer's self path (internal layers)
  ad::Var other_next;  // per-source projections concatenated over heads (internal layers)
  ad::Var aggregate;   // per-target weighted sums; heads concatenated, or averaged on the last layer
  ad::Var pair_rows;   // last layer only: per-pair weighted projections averaged over heads
  std::vector<ad::Tensor> coefficients;  // per head, (pairs x 1), values only
};

// A single attention head over already projected rows. For pair p = (t, s)
// the weight is n_t * softmax over t's pairs of leaky_relu(a . [self[t], other[s]]),
// and the result is that weight times other[s]: one row per pair, or summed per
// target when `aggregate` is set. Targets must be sorted. `coefficients`, when
// given, receives the softmax values (not differentiable). The index storage
// behind `pairs` must outlive the tape's backward pass.
ad::Var attention_head(ad::Var self_proj, ad::Var other_proj, ad::Var a, const PairIndex& pairs, bool aggregate,
                       std::vector<double>* coefficients = nullptr);

// One multi-head attention layer. Parameters are read as
// `<prefix>.h<i>.W` (in x out) and `<prefix>.h<i>.a` (2*out x 1). Weights are
// scaled by the neighbourhood size, so uniform attention reproduces a plain sum.
AttentionOutput gat_attention_layer(ad::Tape& tape, const ad::ParamSet& params, const std::string& prefix,
                                    int heads, bool last, ad::Var self_rows, ad::Var other_rows,
                                    const PairIndex& pairs);

// 3-layer perceptron with ReLU between layers, parameters `<prefix>.l<i>.W/.b`.
ad::Var mlp(ad::Tape& tape, const ad::ParamSet& params, const std::string& prefix, ad::Var x);

// Factor-to-variable marginalisation. `pair_msgs` has one row per entry of
// fg.f2v_pair_source(); the result is (E x 2) in edge order, not normalised.
// The graph must outlive the tape's backward pass.
ad::Var factor_lse(ad::Tape& tape, const FactorGraph& fg, ad::Var pair_msgs);

// (1 x 3) row: log_factor_expectation, factor_entropy, var_entropy.
ad::Var bethe_features(ad::Tape& tape, const FactorGraph& fg, ad::Var v2f, ad::Var f2v);

struct Messages {
  ad::Var v2f;
  ad::Var f2v;
};

Messages initial_messages(ad::Tape& tape, const FactorGraph& fg);
// New log-normalised messages from `state`, per the config's transforms.
ad::Var v2f_update(ad::Tape& tape, const FactorGraph& fg, const ad::ParamSet& params, const ModelConfig& cfg,
                   const Messages& state);
ad::Var f2v_update(ad::Tape& tape, const FactorGraph& fg, const ad::ParamSet& params, const ModelConfig& cfg,
                   const Messages& state);
// Learned (prev + delta(next - prev)) or scalar damping per the config, then
// row normalisation.
Messages apply_damping(ad::Tape& tape, const ad::ParamSet& params, const ModelConfig& cfg, const Messages& prev,
                       const Messages& next);
ad::Var readout(ad::Tape& tape, const ad::ParamSet& params, const ModelConfig& cfg,
                const std::vector<ad::Var>& features);

struct ForwardGraph {
  ad::Var ln_z;
  std::vector<ad::Var> features;  // one (1 x 3) row per iteration
};

ForwardGraph forward_graph(ad::Tape& tape, const FactorGraph& fg, const ad::ParamSet& params,
                           const ModelConfig& cfg);

struct Prediction {
  double ln_z = 0.0;
  std::vector<BetheTerms> trace;
};

Prediction forward(const FactorGraph& fg, const ad::ParamSet& params, const ModelConfig& cfg);

// --- checkpoints ------------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  ad::ParamSet params;
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
// Throws ParseError on malformed input and ConfigMismatch if params do not fit.
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::ordered_json config_to_json(const ModelConfig& cfg);
// Throws ParseError on missing or ill-typed fields.
ModelConfig config_from_json(const nlohmann::json& j);

// 17 significant digits, which parse back to exactly `v`.
std::string format_double(double v);

}  // namespace bpgat
