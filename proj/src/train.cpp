#include "bpgat/train.hpp"

#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>

#include "bpgat/errors.hpp"
#include "bpgat/exact_count.hpp"
#include "bpgat/parallel.hpp"
#include "bpgat/rng.hpp"

namespace bpgat {

using ad::Gradients;
using ad::ParamSet;
using ad::Tensor;

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw InvalidArgument("lr0 must be >= 0");
  if (halve_every < 1) throw InvalidArgument("halve_every must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw InvalidArgument("Adam eps must be > 0");
  if (threads < 1) throw InvalidArgument("threads must be >= 1");
}

void FineTuneConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("fine-tune epochs must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("fine-tune lr must be >= 0");
  if (n_examples < 1) throw InvalidArgument("fine-tune n_examples must be >= 1");
  if (pretrain_epochs < 1) throw InvalidArgument("pretrain_epochs must be >= 1");
}

void adam_step(ParamSet& params, const Gradients& grads, AdamState& state, double lr, const TrainConfig& hyper) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(hyper.beta1, t);
  const double correct2 = 1.0 - std::pow(hyper.beta2, t);
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ShapeError("no gradient for parameter '" + name + "'");
    if (!g->second.same_shape(p)) throw ShapeError("gradient for '" + name + "' has the wrong shape");
    auto& m = state.m.try_emplace(name, p.shape(), 0.0).first->second;
    auto& v = state.v.try_emplace(name, p.shape(), 0.0).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g->second[i];
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      p[i] -= lr * (m[i] / correct1) / (std::sqrt(v[i] / correct2) + hyper.eps);
    }
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw InvalidArgument("epoch must be >= 0");
  return cfg.lr0 * std::pow(0.5, epoch / cfg.halve_every);
}

std::vector<Example> prepare_examples(const Dataset& data) {
  std::vector<Example> out;
  out.reserve(data.size());
  for (const auto& r : data) out.push_back(Example{r.id, FactorGraph::from_cnf(normalize(r.formula)), r.ln_count});
  return out;
}

namespace {

double sample_loss(const Example& ex, const ParamSet& params, const ModelConfig& cfg, Gradients* grads) {
  ad::Tape tape;
  auto g = forward_graph(tape, ex.graph, params, cfg);
  auto loss = ad::mse(g.ln_z, tape.constant(Tensor::scalar(ex.ln_z)));
  const double value = loss.value().item();
  if (grads && std::isfinite(value)) {
    tape.backward(loss);
    *grads = tape.parameter_grads();
  }
  return value;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::from_words({seed, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) {
    auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<LossRecord> run_epochs(const std::vector<Example>& examples, const ModelConfig& model, ParamSet& params,
                                   int epochs, const std::function<double(int)>& lr_of, const TrainConfig& hyper,
                                   const EpochCallback& on_epoch) {
  AdamState adam;
  std::vector<LossRecord> history;
  const auto batch = static_cast<std::size_t>(hyper.batch_size);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double lr = lr_of(epoch);
    auto order = epoch_order(examples.size(), hyper.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      std::vector<Gradients> grads(n);
      std::vector<double> losses(n);
      parallel_for(n, hyper.threads, [&](std::size_t i) {
        losses[i] = sample_loss(examples[order[start + i]], params, model, &grads[i]);
      });
      Gradients total;
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(losses[i])) {
          throw Divergence("non-finite loss on '" + examples[order[start + i]].id + "' in epoch " +
                           std::to_string(epoch));
        }
        for (const auto& [name, g] : grads[i]) {
          auto& acc = total.try_emplace(name, g.shape(), 0.0).first->second;
          for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
        }
      }
      for (auto& [name, p] : params) {
        auto& acc = total.try_emplace(name, p.shape(), 0.0).first->second;
        for (double& v : acc.values()) v /= static_cast<double>(n);
      }
      adam_step(params, total, adam, lr, hyper);
    }
    LossRecord rec{epoch, lr, mean_loss(examples, params, model, hyper.threads)};
    if (!std::isfinite(rec.mean_loss)) throw Divergence("non-finite training loss after epoch " + std::to_string(epoch));
    history.push_back(rec);
    if (on_epoch) on_epoch(rec, params);
  }
  return history;
}

}  // namespace

double mean_loss(const std::vector<Example>& examples, const ParamSet& params, const ModelConfig& cfg, int threads) {
  if (examples.empty()) throw InvalidArgument("mean_loss of an empty set");
  std::vector<double> losses(examples.size());
  parallel_for(examples.size(), threads,
               [&](std::size_t i) { losses[i] = sample_loss(examples[i], params, cfg, nullptr); });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(examples.size());
}

TrainResult train(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  model.validate();
  if (data.empty()) throw InvalidArgument("training dataset is empty");
  auto examples = prepare_examples(data);
  TrainResult result;
  result.checkpoint.config = model;
  result.checkpoint.params = init_params(model);
  result.history = run_epochs(
      examples, model, result.checkpoint.params, cfg.epochs, [&cfg](int e) { return lr_at(e, cfg); }, cfg, on_epoch);
  return result;
}

TrainResult fine_tune(const Checkpoint& start, const Dataset& data, const FineTuneConfig& ft,
                      const TrainConfig& hyper, const EpochCallback& on_epoch) {
  ft.validate();
  check_params(start.config, start.params);
  if (data.size() < ft.n_examples) {
    throw InvalidArgument("fine-tuning needs " + std::to_string(ft.n_examples) + " records, dataset has " +
                          std::to_string(data.size()));
  }
  auto examples = prepare_examples(Dataset(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(ft.n_examples)));
  TrainResult result;
  result.checkpoint = start;
  result.history = run_epochs(
      examples, start.config, result.checkpoint.params, ft.epochs, [&ft](int) { return ft.lr; }, hyper, on_epoch);
  return result;
}

void write_loss_csv(const std::vector<LossRecord>& history, std::ostream& out) {
  out << "epoch,lr,mean_loss\n";
  for (const auto& r : history) out << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.mean_loss) << '\n';
}

// --- evaluation ---------------------------------------------------------------

Predictor exact_predictor() {
  return [](const DatasetRecord& r) {
    auto c = count_dpll(r.formula);
    if (!c.satisfiable()) throw InvalidArgument("record '" + r.id + "' is unsatisfiable");
    return c.ln_count;
  };
}

Predictor bp_predictor(const BpOptions& opts) {
  opts.validate();
  return [opts](const DatasetRecord& r) {
    return estimate_ln_count(FactorGraph::from_cnf(normalize(r.formula)), opts).ln_z;
  };
}

Predictor model_predictor(const Checkpoint& ckpt) {
  check_params(ckpt.config, ckpt.params);
  return [ckpt](const DatasetRecord& r) {
    return forward(FactorGraph::from_cnf(normalize(r.formula)), ckpt.params, ckpt.config).ln_z;
  };
}

EvalReport evaluate(const Predictor& predict, const Dataset& data, int threads) {
  if (data.empty()) throw InvalidArgument("cannot evaluate on an empty dataset");
  EvalReport report;
  report.per_instance.resize(data.size());
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(data.size(), threads, [&](std::size_t i) {
    auto& r = report.per_instance[i];
    r.id = data[i].id;
    r.ln_z = data[i].ln_count;
    r.ln_z_hat = predict(data[i]);
    r.abs_error = std::abs(r.ln_z_hat - r.ln_z);
    if (std::abs(r.ln_z) >= kMreExclusion) r.rel_error = r.abs_error / std::abs(r.ln_z);
  });
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
  report.wall_time_per_instance = elapsed.count() / static_cast<double>(data.size());

  double sq = 0.0, rel = 0.0;
  std::size_t n_rel = 0;
  for (const auto& r : report.per_instance) {
    sq += r.abs_error * r.abs_error;
    if (r.rel_error) {
      rel += *r.rel_error;
      ++n_rel;
    }
  }
  report.rmse = std::sqrt(sq / static_cast<double>(data.size()));
  report.mre = n_rel ? rel / static_cast<double>(n_rel) : 0.0;
  report.mre_excluded = data.size() - n_rel;
  return report;
}

std::string rmse_mre_cell(const EvalReport& report) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f/%.6f", report.rmse, report.mre);
  return buf;
}

nlohmann::ordered_json report_to_json(const EvalReport& report, const nlohmann::ordered_json& echo) {
  nlohmann::ordered_json j;
  j["rmse"] = report.rmse;
  j["mre"] = report.mre;
  j["mre_excluded"] = report.mre_excluded;
  j["wall_time_per_instance"] = report.wall_time_per_instance;
  j["config"] = echo;
  auto& rows = j["per_instance"] = nlohmann::ordered_json::array();
  for (const auto& r : report.per_instance) {
    nlohmann::ordered_json row;
    row["id"] = r.id;
    row["ln_z"] = r.ln_z;
    row["ln_z_hat"] = r.ln_z_hat;
    row["abs_error"] = r.abs_error;
    row["rel_error"] = r.rel_error ? nlohmann::ordered_json(*r.rel_error) : nlohmann::ordered_json(nullptr);
    rows.push_back(std::move(row));
  }
  return j;
}

// --- ablation -----------------------------------------------------------------

std::vector<AblationEntry> full_ablation_matrix(const ModelConfig& base) {
  std::vector<AblationEntry> out;
  for (auto mode : {DampingMode::delta_f2v, DampingMode::delta_v2f, DampingMode::delta_all, DampingMode::fixed_all}) {
    auto cfg = base;
    cfg.variant = Variant::bpgat;
    cfg.damping_mode = mode;
    out.push_back({"damping." + to_string(mode), cfg});
  }
  for (auto v : {Variant::fvgat_vfnone, Variant::fvnone_vfgat, Variant::fvgat_vfmlp, Variant::fvmlp_vfgat}) {
    auto cfg = base;
    cfg.variant = v;
    out.push_back({"hybrid." + to_string(v), cfg});
  }
  for (int t : {5, 10, 15}) {
    auto cfg = base;
    cfg.variant = Variant::bpgat;
    cfg.T = t;
    out.push_back({"T." + std::to_string(t), cfg});
  }
  for (auto v : {Variant::bpgat, Variant::bpnn}) {
    auto cfg = base;
    cfg.variant = v;
    out.push_back({"variant." + to_string(v), cfg});
  }
  return out;
}

std::vector<AblationEntry> parse_ablation_matrix(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("ablation matrix must be a JSON object");
  nlohmann::json base_json = config_to_json(ModelConfig{});
  if (j.contains("base")) base_json.merge_patch(j["base"]);
  const ModelConfig base = config_from_json(base_json);

  if (j.contains("preset")) {
    if (j["preset"] != "full") throw ParseError("unknown ablation preset " + j["preset"].dump());
    return full_ablation_matrix(base);
  }
  if (!j.contains("configs") || !j["configs"].is_array() || j["configs"].empty()) {
    throw ParseError("ablation matrix needs \"preset\" or a non-empty \"configs\" array");
  }
  std::vector<AblationEntry> out;
  for (const auto& entry : j["configs"]) {
    if (!entry.is_object() || !entry.contains("id") || !entry["id"].is_string()) {
      throw ParseError("every ablation config needs a string \"id\"");
    }
    auto patch = entry;
    patch.erase("id");
    auto merged = base_json;
    merged.merge_patch(patch);
    out.push_back({entry["id"].get<std::string>(), config_from_json(merged)});
  }
  return out;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& test_set, std::ostream& out) {
  out << "config_id,variant,damping,T,rmse,mre\n";
  for (const auto& r : rows) {
    if (r.test_set != test_set) continue;
    out << r.config_id << ',' << to_string(r.config.variant) << ',' << to_string(r.config.damping_mode) << ','
        << r.config.T << ',' << format_double(r.rmse) << ',' << format_double(r.mre) << '\n';
  }
}

std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& matrix, const Dataset& train_data,
                                      const std::vector<TestSet>& tests, const TrainConfig& train_cfg,
                                      const std::string& out_dir, int threads) {
  if (matrix.empty()) throw InvalidArgument("ablation matrix is empty");
  if (tests.empty()) throw InvalidArgument("ablation needs at least one test set");
  std::map<std::string, Checkpoint> trained;
  std::vector<AblationRow> rows;
  for (const auto& entry : matrix) {
    const std::string key = config_to_json(entry.config).dump();
    auto it = trained.find(key);
    if (it == trained.end()) it = trained.emplace(key, train(train_data, entry.config, train_cfg).checkpoint).first;
    for (const auto& test : tests) {
      auto report = evaluate(model_predictor(it->second), test.data, threads);
      rows.push_back({entry.config_id, entry.config, test.name, report.rmse, report.mre});
    }
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    for (const auto& test : tests) {
      std::ofstream csv(std::filesystem::path(out_dir) / ("ablation_" + test.name + ".csv"));
      if (!csv) throw InvalidArgument("cannot write ablation table into '" + out_dir + "'");
      write_ablation_csv(rows, test.name, csv);
    }
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      j.push_back({{"config_id", r.config_id},
                   {"test_set", r.test_set},
                   {"config", config_to_json(r.config)},
                   {"rmse", r.rmse},
                   {"mre", r.mre}});
    }
    std::ofstream out(std::filesystem::path(out_dir) / "ablation.json");
    out << j.dump(2) << '\n';
  }
  return rows;
}

}  // namespace bpgat
