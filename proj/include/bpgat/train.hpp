#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bpgat/autodiff.hpp"
#include "bpgat/bp.hpp"
#include "bpgat/datagen.hpp"
#include "bpgat/factor_graph.hpp"
#include "bpgat/model.hpp"

namespace bpgat {

struct TrainConfig {
  int epochs = 1000;
  double lr0 = 1e-4;
  int halve_every = 200;
  int batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  // Forward/backward passes inside a batch; never changes the numbers.
  int threads = 1;

  void validate() const;
};

struct FineTuneConfig {
  int epochs = 250;
  double lr = 1e-6;
  std::size_t n_examples = 250;
  int pretrain_epochs = 500;

  // lr may be 0 (a parameter identity); everything else must be positive.
  void validate() const;
};

struct AdamState {
  ad::ParamSet m;
  ad::ParamSet v;
  long step = 0;
};

// Bias-corrected Adam, tensors visited in name order. Throws ShapeError if a
// gradient is missing or misshapen.
void adam_step(ad::ParamSet& params, const ad::Gradients& grads, AdamState& state, double lr,
               const TrainConfig& hyper);

// lr0 * 0.5^floor(epoch / halve_every)
double lr_at(int epoch, const TrainConfig& cfg);

// A dataset record with its factor graph built once.
struct Example {
  std::string id;
  FactorGraph graph;
  double ln_z = 0.0;
};

std::vector<Example> prepare_examples(const Dataset& data);

struct LossRecord {
  int epoch = 0;
  double lr = 0.0;
  // Mean squared error over the whole training set, using the parameters as
  // they stand at the end of this epoch.
  double mean_loss = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> history;
};

// Called after every epoch with that epoch's record and parameters.
using EpochCallback = std::function<void(const LossRecord&, const ad::ParamSet&)>;

// Mean of (ln_hat - ln_z)^2 over the examples.
double mean_loss(const std::vector<Example>& examples, const ad::ParamSet& params, const ModelConfig& cfg,
                 int threads = 1);

// Mini-batch Adam from init_params(model). Throws InvalidArgument on an empty
// dataset and Divergence when a batch loss is not finite.
TrainResult train(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Continues from `start` at the fixed rate ft.lr on the first ft.n_examples
// records. Batching, Adam constants, and shuffling come from `hyper`.
// Throws ConfigMismatch if the parameters do not fit the stored config and
// InvalidArgument if the dataset is too small.
TrainResult fine_tune(const Checkpoint& start, const Dataset& data, const FineTuneConfig& ft,
                      const TrainConfig& hyper = {}, const EpochCallback& on_epoch = {});

void write_loss_csv(const std::vector<LossRecord>& history, std::ostream& out);

// --- evaluation ---------------------------------------------------------------

using Predictor = std::function<double(const DatasetRecord&)>;

Predictor exact_predictor();
Predictor bp_predictor(const BpOptions& opts = {});
Predictor model_predictor(const Checkpoint& ckpt);

struct InstanceResult {
  std::string id;
  double ln_z = 0.0;
  double ln_z_hat = 0.0;
  double abs_error = 0.0;
  // Empty when |ln_z| < kMreExclusion.
  std::optional<double> rel_error;
};

inline constexpr double kMreExclusion = 1e-9;

struct EvalReport {
  double rmse = 0.0;
  double mre = 0.0;
  // Records left out of the MRE because their log-count is (near) zero.
  std::size_t mre_excluded = 0;
  std::vector<InstanceResult> per_instance;
  double wall_time_per_instance = 0.0;  // seconds
};

// Throws InvalidArgument on an empty dataset.
EvalReport evaluate(const Predictor& predict, const Dataset& data, int threads = 1);

// Pretty "RMSE/MRE" cell, e.g. "0.127600/0.001366".
std::string rmse_mre_cell(const EvalReport& report);

nlohmann::ordered_json report_to_json(const EvalReport& report, const nlohmann::ordered_json& echo);

// --- ablation -----------------------------------------------------------------

struct AblationEntry {
  std::string config_id;
  ModelConfig config;
};

// The comparison grid around `base`: every damping mode, every hybrid, T in
// {5, 10, 15}, and bpgat against bpnn. Rows that describe the same model
// share one training run.
std::vector<AblationEntry> full_ablation_matrix(const ModelConfig& base);

// JSON matrix: {"base": {...}, "preset": "full"} or
// {"base": {...}, "configs": [{"id": "...", <config overrides>}, ...]}.
// Overrides use the checkpoint config field names. Throws ParseError.
std::vector<AblationEntry> parse_ablation_matrix(const nlohmann::json& j);

struct TestSet {
  std::string name;
  Dataset data;
};

struct AblationRow {
  std::string config_id;
  ModelConfig config;
  std::string test_set;
  double rmse = 0.0;
  double mre = 0.0;
};

// Trains each distinct config once under `train_cfg`, evaluates on every test
// set, and writes ablation_<test>.csv plus ablation.json into out_dir (when
// non-empty).
std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& matrix, const Dataset& train_data,
                                      const std::vector<TestSet>& tests, const TrainConfig& train_cfg,
                                      const std::string& out_dir, int threads = 1);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& test_set, std::ostream& out);

}  // namespace bpgat
