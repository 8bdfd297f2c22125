#include "ascl/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "ascl/adversary.hpp"
#include "ascl/config.hpp"
#include "ascl/divergence.hpp"
#include "ascl/errors.hpp"
#include "ascl/loss.hpp"
#include "ascl/trainer.hpp"
#include "format.hpp"

namespace ascl::cli {

namespace {

std::string flag_name(const std::string& key) {
  std::string out = "--" + key;
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& text, Parse parse) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) throw ConfigError("empty entry in list '" + text + "'");
    out.push_back(parse(item));
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

double to_double(const std::string& s) {
  RunConfig probe;
  apply_setting(probe, "lr", s);  // shares the config number grammar
  return probe.optimizer.lr;
}

std::uint64_t to_u64(const std::string& s) {
  RunConfig probe;
  apply_setting(probe, "seed", s);
  return probe.seed;
}

// Options mirroring every config key, plus --config and the attack shorthands.
class ConfigOptions {
 public:
  void attach(CLI::App* app, bool attack_shorthands) {
    app->add_option("--config", config_path_, "key = value config file; flags override it");
    for (const auto& key : config_keys()) {
      if (attack_shorthands && key == "seed") continue;
      app->add_option(flag_name(key), values_[key], "config key " + key);
    }
    if (attack_shorthands) {
      app->add_option("--attack", attack_, "pgd or mpgd");
      app->add_option("--eps", shorthand_["eval_eps"], "attack radius (eval_eps)");
      app->add_option("--eta", shorthand_["eval_eta"], "attack step size (eval_eta)");
      app->add_option("--steps", shorthand_["eval_steps"], "attack steps (eval_steps)");
      app->add_flag("--no-random-init", no_random_init_, "start attacks at the clean input");
      app->add_option("--seed", shorthand_["seed"], "run seed");
    }
  }

  RunConfig build(const CLI::App* app) const {
    RunConfig cfg;
    if (!config_path_.empty()) cfg = load_config(config_path_);
    for (const auto& key : config_keys()) {
      const auto it = values_.find(key);
      if (it == values_.end()) continue;
      if (app->count(flag_name(key)) > 0) apply_setting(cfg, key, it->second);
    }
    for (const auto& [key, value] : shorthand_) {
      const std::string flag = key == "seed" ? "--seed" : key == "eval_eps" ? "--eps" : key == "eval_eta" ? "--eta" : "--steps";
      if (app->count(flag) > 0) apply_setting(cfg, key, value);
    }
    if (no_random_init_) cfg.eval_attack.random_init = false;
    return cfg;
  }

  AttackKind attack_kind(AttackKind fallback) const {
    if (attack_.empty()) return fallback;
    const AttackKind k = parse_attack_kind(attack_);
    if (k == AttackKind::none) throw ConfigError("--attack must be pgd or mpgd");
    return k;
  }

 private:
  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> shorthand_;
  std::string attack_;
  bool no_random_init_ = false;
};

Model load_checkpoint(const std::string& path, const RunConfig& cfg) {
  std::filesystem::path p(path);
  if (p.empty()) p = std::filesystem::path(cfg.output_dir.empty() ? "." : cfg.output_dir) / "model.ckpt";
  return Model::load(p);
}

void check_compatible(const Model& model, const Dataset& data) {
  if (model.spec().input_dim != data.dim || model.spec().num_classes < data.num_classes) {
    throw ConfigError("checkpoint does not match the dataset (input width or class count)");
  }
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw RuntimeFailure("cannot write " + path);
}

void save_any(const Dataset& ds, const std::string& path) {
  if (std::filesystem::path(path).extension() == ".csv") {
    save_csv(ds, path);
  } else {
    save_dataset(ds, path);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial supervised contrastive training on desk-scale datasets", "ascl"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for every subcommand");

  // train
  ConfigOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes metrics.csv, model.ckpt and summary.json");
  train_opts.attach(train_cmd, false);
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "Do not print per-epoch progress");

  // evaluate
  ConfigOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  eval_opts.attach(eval_cmd, true);
  std::string eval_ckpt, eval_attacks, eval_grid, eval_out;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint (default: <output-dir>/model.ckpt)");
  eval_cmd->add_option("--attacks", eval_attacks, "Comma-separated attacks (default: none,pgd,mpgd)");
  eval_cmd->add_option("--eps-grid", eval_grid, "Comma-separated epsilons (default: eval_eps)");
  eval_cmd->add_option("--out", eval_out, "Metrics CSV path (default: stdout)");

  // attack
  ConfigOptions atk_opts;
  auto* atk_cmd = app.add_subcommand("attack", "Attack the test split with a checkpoint");
  atk_opts.attach(atk_cmd, true);
  std::string atk_ckpt, atk_out;
  atk_cmd->add_option("--checkpoint", atk_ckpt, "Checkpoint (default: <output-dir>/model.ckpt)");
  atk_cmd->add_option("--out", atk_out, "Write the adversarial test set (.bin or .csv)");

  // divergence
  ConfigOptions div_opts;
  auto* div_cmd = app.add_subcommand("divergence", "Latent divergences over an epsilon grid");
  div_opts.attach(div_cmd, true);
  std::string div_ckpt, div_grid = "0,0.02,0.05", div_out;
  div_cmd->add_option("--checkpoint", div_ckpt, "Checkpoint (default: <output-dir>/model.ckpt)");
  div_cmd->add_option("--eps-grid", div_grid, "Comma-separated epsilons")->capture_default_str();
  div_cmd->add_option("--out", div_out, "CSV path (default: stdout)");

  // selection-stats
  auto* sel_cmd = app.add_subcommand("selection-stats", "Mean selection set sizes on random uniform-label batches");
  std::string sel_strategy = "global";
  std::size_t sel_batch = 128, sel_classes = 10, sel_trials = 1000;
  std::uint64_t sel_seed = 0;
  double sel_nat_acc = 1.0, sel_adv_acc = 1.0;
  sel_cmd->add_option("--strategy", sel_strategy, "global, hard, soft or leaked")->capture_default_str();
  sel_cmd->add_option("--batch-size", sel_batch, "Samples per batch")->capture_default_str()->check(CLI::Range(2ul, 1ul << 20));
  sel_cmd->add_option("--classes", sel_classes, "Number of classes")->capture_default_str()->check(CLI::Range(2ul, 1ul << 20));
  sel_cmd->add_option("--trials", sel_trials, "Random batches")->capture_default_str()->check(CLI::Range(1ul, 1ul << 30));
  sel_cmd->add_option("--seed", sel_seed, "RNG seed")->capture_default_str();
  sel_cmd->add_option("--nat-acc", sel_nat_acc, "Probability a natural prediction is correct")->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  sel_cmd->add_option("--adv-acc", sel_adv_acc, "Probability an adversarial prediction is correct")->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));

  // sweep
  ConfigOptions sweep_opts;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train one run per grid cell and summarize");
  sweep_opts.attach(sweep_cmd, false);
  std::string grid_scl, grid_vat, grid_strategies, grid_seeds, sweep_out;
  std::size_t jobs = 0;
  sweep_cmd->add_option("--lambda-scl-grid", grid_scl, "Comma-separated lambda_scl values (default: lambda_scl)");
  sweep_cmd->add_option("--lambda-vat-grid", grid_vat, "Comma-separated lambda_vat values (default: lambda_vat)");
  sweep_cmd->add_option("--strategies", grid_strategies, "Comma-separated strategies (default: strategy)");
  sweep_cmd->add_option("--seeds", grid_seeds, "Comma-separated seeds (default: seed)");
  sweep_cmd->add_option("--jobs", jobs, "Parallel cells (0: all cores)");
  sweep_cmd->add_option("--out", sweep_out, "Summary CSV path (default: stdout)");

  // make-data
  ConfigOptions data_opts;
  auto* data_cmd = app.add_subcommand("make-data", "Generate the configured dataset and save both splits");
  data_opts.attach(data_cmd, false);
  std::string data_train_out, data_test_out;
  data_cmd->add_option("--train-out", data_train_out, "Training split path (.bin or .csv)")->required();
  data_cmd->add_option("--test-out", data_test_out, "Test split path (.bin or .csv)")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return kOk;
    }
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kUsage;
  }

  // Everything that can fail on input is checked before any output is produced.
  std::ostringstream buf;
  try {
    if (train_cmd->parsed()) {
      RunConfig cfg = train_opts.build(train_cmd);
      if (cfg.output_dir.empty()) cfg.output_dir = "ascl_run";
      cfg.validate();
      std::ostream* progress = quiet ? nullptr : &out;
      const auto res = train(cfg, [&](const MetricsRow& r) {
        if (progress) {
          *progress << "epoch " << r.epoch << "/" << cfg.epochs << " nat_acc=" << format_number(r.nat_acc)
                    << " rob_acc=" << format_number(r.rob_acc) << " loss=" << format_number(r.loss_total) << '\n';
        }
      });
      for (const auto& r : res.final) {
        out << r.split << " nat_acc=" << format_number(r.nat_acc) << " rob_acc=" << format_number(r.rob_acc)
            << " r_div=" << (r.r_div ? format_number(*r.r_div) : std::string("undefined")) << '\n';
      }
      out << "wrote " << (std::filesystem::path(cfg.output_dir) / "metrics.csv").string() << '\n';
      return kOk;
    }

    if (eval_cmd->parsed()) {
      const RunConfig cfg = eval_opts.build(eval_cmd);
      cfg.validate();
      std::vector<AttackKind> attacks = eval_attacks.empty()
                                            ? std::vector<AttackKind>{AttackKind::none, AttackKind::pgd, AttackKind::mpgd}
                                            : parse_list<AttackKind>(eval_attacks, [](const std::string& s) {
                                                return parse_attack_kind(s);
                                              });
      if (eval_cmd->count("--attack") > 0) attacks = {AttackKind::none, eval_opts.attack_kind(AttackKind::pgd)};
      const std::vector<double> grid = eval_grid.empty() ? std::vector<double>{} : parse_list<double>(eval_grid, to_double);
      const Model model = load_checkpoint(eval_ckpt, cfg);
      const auto [train_set, test_set] = make_datasets(cfg.data, cfg.seed);
      check_compatible(model, test_set);
      const auto rows = evaluate(model, test_set, cfg, attacks, grid);
      write_metrics_header(buf);
      for (const auto& r : rows) write_metrics_row(buf, r);
      write_text(eval_out, buf.str(), out);
      return kOk;
    }

    if (atk_cmd->parsed()) {
      const RunConfig cfg = atk_opts.build(atk_cmd);
      cfg.validate();
      const AttackKind kind = atk_opts.attack_kind(AttackKind::pgd);
      const Model model = load_checkpoint(atk_ckpt, cfg);
      const auto [train_set, test_set] = make_datasets(cfg.data, cfg.seed);
      check_compatible(model, test_set);
      const Tensor adv = attack_dataset(kind, model, test_set, cfg.eval_attack, cfg.seed);
      const double nat = accuracy(model, test_set.feature_tensor(), test_set.labels);
      const double rob = accuracy(model, adv, test_set.labels);
      if (!atk_out.empty()) {
        Dataset adv_set = test_set;
        adv_set.name = test_set.name + "-" + std::string(to_string(kind));
        adv_set.features.assign(adv.data().begin(), adv.data().end());
        save_any(adv_set, atk_out);
      }
      out << "attack=" << to_string(kind) << " eps=" << format_number(cfg.eval_attack.epsilon)
          << " eta=" << format_number(cfg.eval_attack.eta) << " steps=" << cfg.eval_attack.steps
          << " random_init=" << (cfg.eval_attack.random_init ? "true" : "false") << " samples=" << test_set.size()
          << " nat_acc=" << format_number(nat) << " rob_acc=" << format_number(rob) << '\n';
      return kOk;
    }

    if (div_cmd->parsed()) {
      const RunConfig cfg = div_opts.build(div_cmd);
      cfg.validate();
      const AttackKind kind = div_opts.attack_kind(AttackKind::pgd);
      const auto grid = parse_list<double>(div_grid, to_double);
      const Model model = load_checkpoint(div_ckpt, cfg);
      const auto [train_set, test_set] = make_datasets(cfg.data, cfg.seed);
      check_compatible(model, test_set);
      const auto rows = divergence_sweep(model, test_set, cfg.eval_attack, grid, kind, cfg.seed);
      write_divergence_csv(buf, rows);
      write_text(div_out, buf.str(), out);
      return kOk;
    }

    if (sel_cmd->parsed()) {
      const SelectionStrategy strategy = parse_strategy(sel_strategy);
      Rng rng(sel_seed);
      double pos = 0.0, neg = 0.0;
      std::vector<std::size_t> labels(sel_batch), preds_nat(sel_batch), preds_adv(sel_batch);
      auto predict = [&](std::size_t y, double p_correct) {
        if (rng.bernoulli(p_correct)) return y;
        return (y + 1 + rng.below(sel_classes - 1)) % sel_classes;
      };
      for (std::size_t t = 0; t < sel_trials; ++t) {
        for (std::size_t i = 0; i < sel_batch; ++i) {
          labels[i] = rng.below(sel_classes);
          preds_nat[i] = predict(labels[i], sel_nat_acc);
          preds_adv[i] = predict(labels[i], sel_adv_acc);
        }
        const auto s = selection_stats(strategy, labels, preds_nat, preds_adv);
        pos += s.mean_positives;
        neg += s.mean_negatives;
      }
      const double trials = static_cast<double>(sel_trials);
      out << "strategy=" << to_string(strategy) << " batch_size=" << sel_batch << " classes=" << sel_classes
          << " trials=" << sel_trials << '\n'
          << "mean_positives=" << format_number(pos / trials) << '\n'
          << "mean_negatives=" << format_number(neg / trials) << '\n';
      return kOk;
    }

    if (sweep_cmd->parsed()) {
      const RunConfig cfg = sweep_opts.build(sweep_cmd);
      cfg.validate();
      SweepGrid grid;
      grid.lambda_scl = grid_scl.empty() ? std::vector<double>{cfg.weights.lambda_scl} : parse_list<double>(grid_scl, to_double);
      grid.lambda_vat = grid_vat.empty() ? std::vector<double>{cfg.weights.lambda_vat} : parse_list<double>(grid_vat, to_double);
      grid.strategies = grid_strategies.empty() ? std::vector<SelectionStrategy>{cfg.strategy}
                                                : parse_list<SelectionStrategy>(grid_strategies, [](const std::string& s) {
                                                    return parse_strategy(s);
                                                  });
      grid.seeds = grid_seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : parse_list<std::uint64_t>(grid_seeds, to_u64);
      const auto rows = sweep(cfg, grid, jobs);
      write_sweep_csv(buf, rows);
      write_text(sweep_out, buf.str(), out);
      const auto failed = std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.ok; });
      if (failed > 0) err << failed << " of " << rows.size() << " cells failed\n";
      return kOk;
    }

    if (data_cmd->parsed()) {
      const RunConfig cfg = data_opts.build(data_cmd);
      cfg.validate();
      if (cfg.data.kind == "file") throw ConfigError("make-data needs a synthetic dataset (two_moons or blobs)");
      const auto [train_set, test_set] = make_datasets(cfg.data, cfg.seed);
      save_any(train_set, data_train_out);
      save_any(test_set, data_test_out);
      out << "wrote " << train_set.size() << " training and " << test_set.size() << " test samples\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace ascl::cli
