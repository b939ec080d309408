#include "bpgat/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bpgat/bp.hpp"
#include "bpgat/datagen.hpp"
#include "bpgat/errors.hpp"
#include "bpgat/exact_count.hpp"
#include "bpgat/factor_graph.hpp"
#include "bpgat/model.hpp"
#include "bpgat/rng.hpp"
#include "bpgat/train.hpp"

namespace bpgat {

namespace {

using nlohmann::ordered_json;

struct GlobalOptions {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string format = "text";
  std::string out;
};

// "lo:hi" or a single value.
std::pair<int, int> parse_range(const std::string& text, const char* flag) {
  const auto colon = text.find(':');
  try {
    std::size_t used = 0;
    if (colon == std::string::npos) {
      int v = std::stoi(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return {v, v};
    }
    const std::string lo = text.substr(0, colon), hi = text.substr(colon + 1);
    int a = std::stoi(lo, &used);
    if (used != lo.size()) throw std::invalid_argument(text);
    int b = std::stoi(hi, &used);
    if (used != hi.size()) throw std::invalid_argument(text);
    return {a, b};
  } catch (const std::logic_error&) {
    throw InvalidArgument(std::string(flag) + " expects lo:hi, got '" + text + "'");
  }
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot write '" + path + "'");
  f << text;
  if (!f) throw InvalidArgument("failed writing '" + path + "'");
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// Model flags shared by train and ablate. Unset flags keep the defaults.
struct ModelFlags {
  std::string variant = "bpgat";
  std::optional<int> T;
  std::optional<std::string> damping;
  std::optional<double> alpha;
  std::optional<std::string> readout;
  std::optional<std::string> init;
  std::optional<std::vector<int>> heads;
  std::optional<int> head_dim;
  std::optional<int> hidden;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--variant", variant, "bpgat or bpnn")->capture_default_str();
    cmd.add_option("--T", T, "message-passing iterations");
    cmd.add_option("--damping", damping, "delta_f2v, delta_v2f, delta_all or fixed_all");
    cmd.add_option("--alpha", alpha, "fixed damping weight of the new message");
    cmd.add_option("--readout", readout, "mlp3 or bethe_bypass");
    cmd.add_option("--init", init, "seeded_random or bp_identity");
    cmd.add_option("--heads", heads, "heads per attention layer, e.g. 4,4,6")->delimiter(',');
    cmd.add_option("--head-dim", head_dim, "attention head width");
    cmd.add_option("--hidden", hidden, "MLP hidden width");
  }

  ModelConfig build(std::uint64_t seed) const {
    ModelConfig cfg;
    cfg.variant = parse_variant(variant);
    if (T) cfg.T = *T;
    if (damping) cfg.damping_mode = parse_damping_mode(*damping);
    if (alpha) cfg.alpha = *alpha;
    if (readout) cfg.readout = parse_readout(*readout);
    if (init) cfg.init = parse_init_kind(*init);
    if (heads) cfg.gat_heads = *heads;
    if (head_dim) cfg.gat_head_dim = *head_dim;
    if (hidden) cfg.mlp_hidden = *hidden;
    cfg.init_seed = seed;
    cfg.validate();
    return cfg;
  }
};

struct TrainFlags {
  TrainConfig cfg;

  void add_to(CLI::App& cmd, bool with_schedule) {
    cmd.add_option("--epochs", cfg.epochs)->capture_default_str();
    if (with_schedule) {
      cmd.add_option("--lr", cfg.lr0, "initial learning rate")->capture_default_str();
      cmd.add_option("--halve-every", cfg.halve_every, "epochs between learning-rate halvings")->capture_default_str();
    }
    cmd.add_option("--batch-size", cfg.batch_size)->capture_default_str();
  }

  TrainConfig build(const GlobalOptions& g) const {
    TrainConfig c = cfg;
    c.seed = g.seed;
    c.threads = g.threads;
    c.validate();
    return c;
  }
};

std::string loss_csv_path(const std::string& ckpt_path) { return ckpt_path + ".loss.csv"; }

void save_history(const std::vector<LossRecord>& history, const std::string& path) {
  std::ostringstream csv;
  write_loss_csv(history, csv);
  write_text_file(path, csv.str());
}

// --- gen-data -------------------------------------------------------------------

struct GenDataCmd {
  std::string nv = "10:30";
  std::string nc = "20:50";
  long long count = 1000;
  std::string dist = "random";
  int graph_n = 8;
  double graph_p = 0.3;
  int k = 3;
  long long budget_ms = 10000;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--nv", nv, "variable-count range lo:hi")->capture_default_str();
    cmd.add_option("--nc", nc, "clause-count range lo:hi")->capture_default_str();
    cmd.add_option("--count", count, "number of labelled formulae")->capture_default_str();
    cmd.add_option("--dist", dist, "random or coloring")->capture_default_str();
    cmd.add_option("--graph-n", graph_n, "coloring: nodes per graph")->capture_default_str();
    cmd.add_option("--graph-p", graph_p, "coloring: edge probability")->capture_default_str();
    cmd.add_option("--k", k, "coloring: number of colours")->capture_default_str();
    cmd.add_option("--budget-ms", budget_ms, "exact-count budget per formula")->capture_default_str();
  }

  int run(const GlobalOptions& g, std::ostream& out) const {
    if (g.out.empty()) throw InvalidArgument("gen-data needs --out");
    if (count < 1) throw InvalidArgument("--count must be at least 1");
    if (budget_ms < 1) throw InvalidArgument("--budget-ms must be positive");
    LabelOptions label;
    label.count_budget = std::chrono::milliseconds(budget_ms);
    Rng rng(g.seed);

    ordered_json meta;
    meta["seed"] = g.seed;
    meta["dist"] = dist;
    meta["count"] = count;
    meta["budget_ms"] = budget_ms;
    const auto start = std::chrono::steady_clock::now();
    Dataset data;
    if (dist == "random") {
      GenParams params;
      std::tie(params.nv_min, params.nv_max) = parse_range(nv, "--nv");
      std::tie(params.nc_min, params.nc_max) = parse_range(nc, "--nc");
      params.seed = g.seed;
      params.validate();
      meta["nv"] = {params.nv_min, params.nv_max};
      meta["nc"] = {params.nc_min, params.nc_max};
      meta["bern_p"] = params.bern_p;
      meta["geom_p"] = params.geom_p;
      meta["max_clause_len"] = params.max_clause_len;
      data = build_labeled_dataset(params, static_cast<std::size_t>(count), rng, label);
    } else if (dist == "coloring") {
      if (k < 1) throw InvalidArgument("--k must be at least 1");
      meta["graph_n"] = graph_n;
      meta["graph_p"] = graph_p;
      meta["k"] = k;
      data = build_coloring_dataset(graph_n, graph_p, k, static_cast<std::size_t>(count), rng, label);
    } else {
      throw InvalidArgument("--dist must be random or coloring, got '" + dist + "'");
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    write_dataset_file(data, g.out);
    write_text_file(g.out + ".meta.json", meta.dump(2) + "\n");

    const DatasetSummary s = summarize(data);
    const double avg_t = seconds / static_cast<double>(s.count);
    if (g.format == "json") {
      ordered_json j;
      j["count"] = s.count;
      j["avg_vars"] = s.mean_vars;
      j["avg_clauses"] = s.mean_clauses;
      j["avg_ln_count"] = s.mean_ln_count;
      j["avg_t_s"] = avg_t;
      out << j.dump() << '\n';
    } else if (g.format == "csv") {
      out << "count,avg_vars,avg_clauses,avg_ln_count,avg_t_s\n"
          << s.count << ',' << fixed(s.mean_vars, 2) << ',' << fixed(s.mean_clauses, 2) << ','
          << fixed(s.mean_ln_count, 4) << ',' << fixed(avg_t, 4) << '\n';
    } else {
      out << "count " << s.count << "  avg_vars " << fixed(s.mean_vars, 2) << "  avg_clauses "
          << fixed(s.mean_clauses, 2) << "  avg_ln_count " << fixed(s.mean_ln_count, 4) << "  avg_t_s "
          << fixed(avg_t, 4) << '\n';
    }
    return kExitOk;
  }
};

// --- count ----------------------------------------------------------------------

struct CountCmd {
  std::string in;
  std::string method = "exact";
  std::string ckpt;
  std::optional<int> T;
  std::optional<double> alpha;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--in", in, "DIMACS file")->required();
    cmd.add_option("--method", method, "exact, bp or model")->capture_default_str();
    cmd.add_option("--ckpt", ckpt, "checkpoint for --method model");
    cmd.add_option("--T", T, "iterations (bp default 5; model default from checkpoint)");
    cmd.add_option("--alpha", alpha, "damping weight of the new message");
  }

  int run(const GlobalOptions& g, std::ostream& out) const {
    const CnfFormula formula = read_dimacs_file(in);
    ordered_json j;
    j["method"] = method;
    std::optional<std::string> count_text;
    int code = kExitOk;
    if (method == "exact") {
      const ExactCount c = count_dpll(formula);
      count_text = c.to_string();
      if (c.satisfiable()) {
        j["ln_count"] = c.ln_count;
      } else {
        j["ln_count"] = nullptr;
        code = kExitUnsat;
      }
    } else if (method == "bp") {
      BpOptions opts;
      if (T) opts.max_iters = *T;
      if (alpha) opts.damping = *alpha;
      opts.validate();
      const BpEstimate est = estimate_ln_count(FactorGraph::from_cnf(normalize(formula)), opts);
      j["ln_count"] = est.ln_z;
      j["converged"] = est.converged;
    } else if (method == "model") {
      if (ckpt.empty()) throw InvalidArgument("--method model needs --ckpt");
      Checkpoint c = load_checkpoint(ckpt);
      if (T) c.config.T = *T;
      if (alpha) c.config.alpha = *alpha;
      c.config.validate();
      j["ln_count"] = forward(FactorGraph::from_cnf(normalize(formula)), c.params, c.config).ln_z;
    } else {
      throw InvalidArgument("--method must be exact, bp or model, got '" + method + "'");
    }

    if (g.format == "csv") {
      out << "method,ln_count" << (count_text ? ",count" : "") << (j.contains("converged") ? ",converged" : "")
          << '\n';
      out << method << ',' << (j["ln_count"].is_null() ? "" : j["ln_count"].dump());
      if (count_text) out << ',' << *count_text;
      if (j.contains("converged")) out << ',' << j["converged"].dump();
      out << '\n';
    } else {
      // Counts can exceed any machine integer, so the digits are spliced in verbatim.
      std::string text = j.dump();
      if (count_text) text.insert(text.size() - 1, ",\"count\":" + *count_text);
      out << text << '\n';
    }
    return code;
  }
};

// --- train / finetune -----------------------------------------------------------

struct TrainCmd {
  std::string data;
  std::string loss_csv;
  ModelFlags model;
  TrainFlags train;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--data", data, "training JSONL")->required();
    cmd.add_option("--loss-csv", loss_csv, "loss history (default <out>.loss.csv)");
    model.add_to(cmd);
    train.add_to(cmd, true);
  }

  int run(const GlobalOptions& g, std::ostream& out) const {
    if (g.out.empty()) throw InvalidArgument("train needs --out");
    const Dataset ds = read_dataset_file(data);
    const ModelConfig cfg = model.build(g.seed);
    const TrainResult result = bpgat::train(ds, cfg, train.build(g));
    save_checkpoint(result.checkpoint, g.out);
    save_history(result.history, loss_csv.empty() ? loss_csv_path(g.out) : loss_csv);
    report(result, g, out);
    return kExitOk;
  }

  static void report(const TrainResult& result, const GlobalOptions& g, std::ostream& out) {
    const LossRecord& last = result.history.back();
    if (g.format == "json") {
      ordered_json j;
      j["epochs"] = result.history.size();
      j["final_mean_loss"] = last.mean_loss;
      j["checkpoint"] = g.out;
      out << j.dump() << '\n';
    } else {
      out << "epochs " << result.history.size() << "  final_mean_loss " << fixed(last.mean_loss) << "  checkpoint "
          << g.out << '\n';
    }
  }
};

struct FineTuneCmd {
  std::string ckpt;
  std::string data;
  std::string loss_csv;
  FineTuneConfig ft;
  TrainFlags hyper;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--ckpt", ckpt, "starting checkpoint")->required();
    cmd.add_option("--data", data, "adaptation JSONL")->required();
    cmd.add_option("--loss-csv", loss_csv, "loss history (default <out>.loss.csv)");
    cmd.add_option("--lr", ft.lr, "fixed learning rate")->capture_default_str();
    cmd.add_option("--n-examples", ft.n_examples, "records taken from the front of --data")->capture_default_str();
    hyper.cfg.epochs = ft.epochs;
    hyper.add_to(cmd, false);
  }

  int run(const GlobalOptions& g, std::ostream& out) const {
    if (g.out.empty()) throw InvalidArgument("finetune needs --out");
    const Checkpoint start = load_checkpoint(ckpt);
    const Dataset ds = read_dataset_file(data);
    FineTuneConfig f = ft;
    f.epochs = hyper.cfg.epochs;
    const TrainResult result = fine_tune(start, ds, f, hyper.build(g));
    save_checkpoint(result.checkpoint, g.out);
    save_history(result.history, loss_csv.empty() ? loss_csv_path(g.out) : loss_csv);
    TrainCmd::report(result, g, out);
    return kExitOk;
  }
};

// --- eval -----------------------------------------------------------------------

struct EvalCmd {
  std::string ckpt;
  std::string data;
  std::string method = "model";
  std::optional<int> T;
  std::optional<double> alpha;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--ckpt", ckpt, "checkpoint for --method model");
    cmd.add_option("--data", data, "labelled JSONL")->required();
    cmd.add_option("--method", method, "model, bp or exact")->capture_default_str();
    cmd.add_option("--T", T, "bp iterations");
    cmd.add_option("--alpha", alpha, "bp damping weight of the new message");
  }

  int run(const GlobalOptions& g, std::ostream& out) const {
    const Dataset ds = read_dataset_file(data);
    ordered_json echo;
    echo["method"] = method;
    echo["data"] = data;
    Predictor predict;
    if (method == "model") {
      if (ckpt.empty()) throw InvalidArgument("--method model needs --ckpt");
      Checkpoint c = load_checkpoint(ckpt);
      echo["ckpt"] = ckpt;
      echo["config"] = config_to_json(c.config);
      predict = model_predictor(c);
    } else if (method == "bp") {
      BpOptions opts;
      if (T) opts.max_iters = *T;
      if (alpha) opts.damping = *alpha;
      opts.validate();
      echo["T"] = opts.max_iters;
      echo["alpha"] = opts.damping;
      predict = bp_predictor(opts);
    } else if (method == "exact") {
      predict = exact_predictor();
    } else {
      throw InvalidArgument("--method must be model, bp or exact, got '" + method + "'");
    }
    const EvalReport report = evaluate(predict, ds, g.threads);
    const ordered_json j = report_to_json(report, echo);
    if (!g.out.empty()) write_text_file(g.out, j.dump(2) + "\n");
    if (g.format == "json") {
      out << j.dump() << '\n';
    } else if (g.format == "csv") {
      out << "rmse,mre,n\n" << fixed(report.rmse) << ',' << fixed(report.mre) << ',' << ds.size() << '\n';
    } else {
      out << "RMSE/MRE: " << rmse_mre_cell(report) << '\n';
    }
    return kExitOk;
  }
};

// --- ablate ---------------------------------------------------------------------

struct AblateCmd {
  std::string matrix;
  std::string data;
  std::vector<std::string> tests;
  TrainFlags train;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--matrix", matrix, "matrix JSON")->required();
    cmd.add_option("--data", data, "training JSONL")->required();
    cmd.add_option("--test", tests, "name=path test set (repeatable; default: the training data)");
    train.cfg.epochs = 50;
    train.add_to(cmd, true);
  }

  int run(const GlobalOptions& g, std::ostream& out) const {
    const auto entries = parse_ablation_matrix(read_json_file(matrix));
    const Dataset train_data = read_dataset_file(data);
    std::vector<TestSet> sets;
    for (const auto& t : tests) {
      const auto eq = t.find('=');
      if (eq == std::string::npos || eq == 0) throw InvalidArgument("--test expects name=path, got '" + t + "'");
      sets.push_back({t.substr(0, eq), read_dataset_file(t.substr(eq + 1))});
    }
    if (sets.empty()) sets.push_back({"train", train_data});
    const std::string dir = g.out.empty() ? "." : g.out;
    std::filesystem::create_directories(dir);
    const auto rows = run_ablation(entries, train_data, sets, train.build(g), dir, g.threads);
    for (const auto& s : sets) {
      if (g.format == "csv") {
        write_ablation_csv(rows, s.name, out);
        continue;
      }
      out << "[" << s.name << "]\n";
      for (const auto& r : rows) {
        if (r.test_set != s.name) continue;
        out << r.config_id << "  RMSE/MRE: " << fixed(r.rmse) << '/' << fixed(r.mre) << '\n';
      }
    }
    return kExitOk;
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Model counting with exact, belief-propagation and learned message-passing estimators"};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "evaluation threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--format", g.format, "json, csv or text")
      ->capture_default_str()
      ->check(CLI::IsMember({"json", "csv", "text"}));
  app.add_option("--out", g.out, "output path (file, or directory for ablate)");

  GenDataCmd gen;
  CountCmd count;
  TrainCmd train;
  FineTuneCmd finetune;
  EvalCmd eval;
  AblateCmd ablate;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate and label a dataset");
  gen.add_to(*gen_cmd);
  auto* count_cmd = app.add_subcommand("count", "count or estimate models of one DIMACS file");
  count.add_to(*count_cmd);
  auto* train_cmd = app.add_subcommand("train", "train a model from scratch");
  train.add_to(*train_cmd);
  auto* ft_cmd = app.add_subcommand("finetune", "continue training a checkpoint at a fixed rate");
  finetune.add_to(*ft_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "RMSE and MRE of an estimator on a labelled dataset");
  eval.add_to(*eval_cmd);
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate a grid of model configurations");
  ablate.add_to(*ablate_cmd);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitBadInput;
  }

  try {
    if (*gen_cmd) return gen.run(g, out);
    if (*count_cmd) return count.run(g, out);
    if (*train_cmd) return train.run(g, out);
    if (*ft_cmd) return finetune.run(g, out);
    if (*eval_cmd) return eval.run(g, out);
    if (*ablate_cmd) return ablate.run(g, out);
  } catch (const Divergence& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const BudgetExhausted& e) {
    err << "error: " << e.what() << '\n';
    return kExitBudget;
  } catch (const Timeout& e) {
    err << "error: " << e.what() << '\n';
    return kExitBudget;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace bpgat
