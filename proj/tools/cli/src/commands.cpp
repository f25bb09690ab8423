#include "shakenorm/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "shakenorm/cli/config.hpp"
#include "shakenorm/embed_analysis.hpp"
#include "shakenorm/training.hpp"

namespace shakenorm::cli {

namespace fs = std::filesystem;

namespace {

/// Run flags shared by train, evaluate and embed. Each maps onto one config key.
struct RunFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Flat key = value config file");
    static const std::pair<const char*, const char*> kFlags[] = {
        {"--layout", "layout"},     {"--shake", "shake"},         {"--gamma0", "gamma0"},
        {"--subbands", "subbands"}, {"--p-off", "p_off"},         {"--granularity", "granularity"},
        {"--seeds", "seeds"},       {"--epochs", "epochs"},       {"--data-dir", "data_dir"},
        {"--out", "out"},           {"--precision", "precision"},
    };
    for (const auto& [flag, key] : kFlags) {
      app->add_option_function<std::string>(
          flag, [this, k = std::string(key)](const std::string& v) { values[k] = v; },
          std::string("Overrides config key ") + key)
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    app->add_option_function<std::vector<std::string>>(
        "--set",
        [this](const std::vector<std::string>& kvs) {
          for (const auto& kv : kvs) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            values[kv.substr(0, eq)] = kv.substr(eq + 1);
          }
        },
        "Any config key, as key=value");
  }

  RunConfig resolve(RunConfig base = {}) const {
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
      std::ifstream in(config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      base.merge(ss.str(), config_path);
    }
    for (const auto& [k, v] : values) base.set(k, v);
    base.validate();
    return base;
  }
};

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void require_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

template <typename T>
void train_image(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto data = load_data(cfg);
  const auto spec = cfg.network_spec(data.train.class_count, data.train.channels());
  out << "train " << data.train.size() << " / test " << data.test.size() << " samples, " << to_string(spec.layout)
      << ", shake " << cfg.get("shake") << ", gamma0 " << spec.gamma0 << '\n';
  auto agg = open_out(dir / "aggregate.csv");
  agg << "seed,train_ua,valid_ua,gap\n";
  double sum_valid = 0.0, sum_train = 0.0, sum_gap = 0.0;
  const auto seeds = cfg.seeds();
  for (auto seed : seeds) {
    Rng rng(seed);
    Network<T> net(spec, rng);
    auto tc = cfg.train_config(seed);
    tc.log = &out;
    out << "seed " << seed << '\n';
    const RunMetrics m = train_run(net, data.train, data.test, tc);
    const fs::path sdir = dir / ("seed_" + std::to_string(seed));
    fs::create_directories(sdir);
    write_metrics_csv(sdir / "metrics.csv", m);
    RunConfig single = cfg;
    single.set("seeds", std::to_string(seed));
    save_checkpoint(sdir / "checkpoint.bin", net, single.to_string());
    const auto& f = m.final();
    agg << seed << ',' << fmt(f.train_ua, "%.9f") << ',' << fmt(f.valid_ua, "%.9f") << ',' << fmt(f.gap, "%.9f")
        << '\n';
    sum_train += f.train_ua;
    sum_valid += f.valid_ua;
    sum_gap += f.gap;
  }
  const double n = static_cast<double>(seeds.size());
  agg << "mean," << fmt(sum_train / n, "%.9f") << ',' << fmt(sum_valid / n, "%.9f") << ',' << fmt(sum_gap / n, "%.9f")
      << '\n';
  out << "mean valid UA " << fmt(sum_valid / n, "%.2f") << "%, mean gap " << fmt(sum_gap / n, "%.2f") << " over "
      << seeds.size() << " seed(s)\n";
}

template <typename T>
void train_adding(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  auto agg = open_out(dir / "aggregate.csv");
  agg << "seed,tail_loss\n";
  double total = 0.0;
  const auto seeds = cfg.seeds();
  for (auto seed : seeds) {
    const auto res = train_adding_task<T>(cfg.adding_config(seed));
    auto loss = open_out(dir / ("seed_" + std::to_string(seed)) / "loss.csv");
    loss << "step,loss\n";
    for (std::size_t i = 0; i < res.loss.size(); ++i) loss << i << ',' << fmt(res.loss[i], "%.9g") << '\n';
    const double tail = res.tail_loss();
    out << "seed " << seed << ": tail loss " << fmt(tail, "%.6f") << '\n';
    agg << seed << ',' << fmt(tail, "%.9g") << '\n';
    total += tail;
  }
  agg << "mean," << fmt(total / static_cast<double>(seeds.size()), "%.9g") << '\n';
  out << "mean tail loss " << fmt(total / static_cast<double>(seeds.size()), "%.6f") << '\n';
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = cfg.get("out");
  fs::create_directories(dir);
  cfg.write(dir / "config.txt");
  const bool dbl = cfg.get("precision") == "64";
  if (cfg.get("task") == "adding") {
    dbl ? train_adding<double>(cfg, dir, out) : train_adding<float>(cfg, dir, out);
  } else {
    dbl ? train_image<double>(cfg, dir, out) : train_image<float>(cfg, dir, out);
  }
  return kExitOk;
}

/// Config stored in the checkpoint with the command-line overrides on top.
RunConfig checkpoint_config(const std::string& path, const RunFlags& flags) {
  require_checkpoint(path);
  return flags.resolve(RunConfig::parse(read_checkpoint_metadata(path), path));
}

template <typename T>
int evaluate_checkpoint(const RunConfig& cfg, const std::string& path, std::ostream& out) {
  const auto data = load_data(cfg);
  Rng rng(0);
  Network<T> net(cfg.network_spec(data.train.class_count, data.train.channels()), rng);
  load_checkpoint(path, net);
  const auto eb = static_cast<std::size_t>(cfg.get_int("eval_batch"));
  const auto tr = evaluate(net, data.train, eb, &out);
  const auto te = evaluate(net, data.test, eb, &out);
  out << "train UA " << fmt(tr.ua, "%.2f") << "%  test UA " << fmt(te.ua, "%.2f") << "%  gap "
      << fmt(tr.ua - te.ua, "%.2f") << "  test loss " << fmt(te.loss, "%.6f") << '\n';
  return kExitOk;
}

template <typename T>
int embed_checkpoint(const RunConfig& cfg, const std::string& path, Mode mode, const std::string& split,
                     std::uint64_t seed, const std::string& output, std::ostream& out) {
  const auto data = load_data(cfg);
  Rng rng(0);
  Network<T> net(cfg.network_spec(data.train.class_count, data.train.channels()), rng);
  load_checkpoint(path, net);
  if (!net.has_embedding_tap()) throw ConfigError("checkpoint network has no embedding tap (embed_dim = 0)");
  const Dataset& ds = split == "test" ? data.test : data.train;
  // Train mode normalizes with batch statistics, so it uses the training batch size.
  const auto batch = static_cast<std::size_t>(cfg.get_int(mode == Mode::kTrain ? "batch" : "eval_batch"));
  const auto es = extract_embeddings(net, ds, mode, seed, batch);
  if (fs::path(output).has_parent_path()) fs::create_directories(fs::path(output).parent_path());
  write_embeddings_csv(es, output);
  out << "wrote " << es.size() << " x " << es.dim << " embeddings to " << output << '\n';
  return kExitOk;
}

int cmd_analyze(const std::string& train_csv, const std::string& eval_csv, const std::string& output,
                const std::string& format, std::size_t steps, std::ostream& out) {
  for (const auto& p : {train_csv, eval_csv}) {
    if (!fs::exists(p)) throw ConfigError("embedding file not found: " + p);
  }
  const auto tr = read_embeddings_csv(train_csv);
  const auto ev = read_embeddings_csv(eval_csv);
  if (tr.size() != ev.size()) {
    throw ConfigError("row count mismatch: " + train_csv + " has " + std::to_string(tr.size()) + ", " + eval_csv +
                      " has " + std::to_string(ev.size()));
  }
  if (tr.labels != ev.labels) throw ConfigError("label mismatch between " + train_csv + " and " + eval_csv);
  if (tr.size() == 0) throw ConfigError("empty embedding files");
  const std::size_t classes = *std::max_element(ev.labels.begin(), ev.labels.end()) + 1;
  std::vector<double> grid(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) grid[i] = static_cast<double>(i) / static_cast<double>(steps);
  DispersionReport report;
  report.curve = relative_distance_curve(tr, ev, grid, classes);
  report.stats = dispersion_stats(ev, classes);
  export_report(report, output, format == "csv" ? ReportFormat::kCsv : ReportFormat::kJson);
  // Closest grid point to r = 0.3 for the console summary.
  std::size_t at = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (std::abs(grid[i] - 0.3) < std::abs(grid[at] - 0.3)) at = i;
  }
  out << "pooled fraction within " << fmt(grid[at], "%.2f") << " x R: " << fmt(report.curve.pooled[at]) << '\n'
      << "min inter-class margin " << fmt(report.stats.min_margin) << " (classes " << report.stats.margin_pair[0]
      << ", " << report.stats.margin_pair[1] << ")\n"
      << "wrote " << output << '\n';
  return kExitOk;
}

}  // namespace

int cmd_gradcheck(const std::vector<GradTarget>& targets, std::ostream& out, double tol) {
  return run_gradchecks(targets, out, tol).failures == 0 ? kExitOk : kExitCheckFailed;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shake-shake residual networks with batch-normalization layout studies", "shakenorm"};
  app.require_subcommand(1);

  RunFlags train_flags, eval_flags, embed_flags;
  auto* train = app.add_subcommand("train", "Train one run per seed");
  train_flags.attach(train);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on both splits");
  std::string eval_ckpt;
  evaluate_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
  eval_flags.attach(evaluate_cmd);

  auto* embed = app.add_subcommand("embed", "Extract embeddings from a checkpoint");
  std::string embed_ckpt, embed_mode = "eval", embed_split = "train", embed_out = "embeddings.csv";
  std::uint64_t embed_seed = 0;
  embed->add_option("--checkpoint", embed_ckpt, "Checkpoint file");
  embed->add_option("--mode", embed_mode, "Network mode used for extraction")->check(CLI::IsMember({"train", "eval"}));
  embed->add_option("--split", embed_split, "Dataset split")->check(CLI::IsMember({"train", "test"}));
  embed->add_option("--output", embed_out, "Embedding CSV path");
  embed->add_option("--shake-seed", embed_seed, "Seed for train-mode shaking");
  embed_flags.attach(embed);

  auto* analyze = app.add_subcommand("analyze", "Dispersion report from train-mode and eval-mode embeddings");
  std::string a_train, a_eval, a_out = "report.json", a_format = "json";
  std::size_t a_steps = 20;
  analyze->add_option("--train-csv", a_train, "Train-mode embedding CSV")->required();
  analyze->add_option("--eval-csv", a_eval, "Eval-mode embedding CSV")->required();
  analyze->add_option("--out", a_out, "Report path");
  analyze->add_option("--format", a_format, "Report format")->check(CLI::IsMember({"csv", "json"}));
  analyze->add_option("--grid-steps", a_steps, "Curve grid resolution over [0, 1]")->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference checks of every backward rule");
  std::string g_target = "all", g_precision = "64";
  double g_tol = 1e-4;
  grad->add_option("--target", g_target, "Catalog group")->check(CLI::IsMember({"layer", "block", "cell", "all"}));
  grad->add_option("--precision", g_precision, "Arithmetic precision (64 only)");
  grad->add_option("--tol", g_tol, "Maximum relative error");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags.resolve(), out);
    if (evaluate_cmd->parsed()) {
      const auto cfg = checkpoint_config(eval_ckpt, eval_flags);
      return cfg.get("precision") == "64" ? evaluate_checkpoint<double>(cfg, eval_ckpt, out)
                                          : evaluate_checkpoint<float>(cfg, eval_ckpt, out);
    }
    if (embed->parsed()) {
      const auto cfg = checkpoint_config(embed_ckpt, embed_flags);
      const Mode mode = embed_mode == "train" ? Mode::kTrain : Mode::kEval;
      return cfg.get("precision") == "64"
                 ? embed_checkpoint<double>(cfg, embed_ckpt, mode, embed_split, embed_seed, embed_out, out)
                 : embed_checkpoint<float>(cfg, embed_ckpt, mode, embed_split, embed_seed, embed_out, out);
    }
    if (analyze->parsed()) return cmd_analyze(a_train, a_eval, a_out, a_format, a_steps, out);
    if (grad->parsed()) {
      if (g_precision != "64") throw ConfigError("gradcheck runs in 64-bit precision only (got " + g_precision + ")");
      return cmd_gradcheck(gradcheck_catalog(g_target), out, g_tol);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace shakenorm::cli
