#include "ascl/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

#include "json.hpp"

#include "ascl/adversary.hpp"
#include "ascl/divergence.hpp"
#include "ascl/errors.hpp"
#include "ascl/loss.hpp"
#include "format.hpp"

#ifndef ASCL_BUILD_ID
#define ASCL_BUILD_ID "unknown"
#endif

namespace ascl {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kShuffleStream = 0x5b0f;
constexpr std::uint64_t kAttackStream = 0xa77c;
constexpr std::uint64_t kAugmentStream = 0xa06e;
constexpr std::uint64_t kEpochEvalStream = 0xe7a1;
constexpr std::uint64_t kFinalEvalStream = 0xf1a1;

constexpr const char* kColumns[] = {"epoch",      "split",     "nat_acc",   "rob_acc",  "loss_at",
                                    "loss_scl",   "loss_vat",  "loss_total", "d_a_plus", "d_a_minus",
                                    "r_div",      "mean_pos",  "mean_neg",  "wall_time_s"};

bool all_finite(std::initializer_list<double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double parse_field(const std::string& text, std::size_t line, const char* column) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("metrics line " + std::to_string(line) + ": bad " + column + " value '" + text + "'", line);
  }
  return v;
}

// Runs the objective on consecutive chunks of an attacked set without recording gradients.
struct ChunkedLoss {
  double at = 0.0, scl = 0.0, vat = 0.0, total = 0.0, pos = 0.0, neg = 0.0;
};

ChunkedLoss chunked_loss(const Model& frozen, const Tensor& x_nat, const Tensor& x_adv,
                         std::span<const std::size_t> labels, const RunConfig& cfg) {
  ChunkedLoss out;
  const std::size_t n = labels.size();
  const std::size_t chunk = std::max<std::size_t>(cfg.batch_size, 2);
  double weight = 0.0;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = std::min(n, start + chunk);
    if (n - end < 2) end = n;  // fold a trailing singleton into this chunk
    const Tensor xn = slice_rows(x_nat, start, end);
    const Tensor xa = slice_rows(x_adv, start, end);
    const auto lb = labels.subspan(start, end - start);
    const auto b = total_loss(frozen, xn, xa, lb, cfg.strategy, cfg.weights, cfg.flags);
    const double w = static_cast<double>(end - start);
    out.at += w * b.at;
    out.scl += w * b.scl;
    out.vat += w * b.vat;
    out.total += w * b.total.item();
    out.pos += w * b.selection.mean_positives;
    out.neg += w * b.selection.mean_negatives;
    weight += w;
    start = end;
  }
  out.at /= weight;
  out.scl /= weight;
  out.vat /= weight;
  out.total /= weight;
  out.pos /= weight;
  out.neg /= weight;
  return out;
}

void fill_divergence(MetricsRow& row, const DivergenceReport& rep) {
  row.d_a_plus = rep.d_a_plus;
  row.d_a_minus = rep.d_a_minus;
  row.r_div = rep.r_div;
}

std::string attack_label(AttackKind kind, double eps) { return std::string(to_string(kind)) + "@" + format_number(eps); }

nlohmann::ordered_json row_json(const MetricsRow& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["split"] = r.split;
  j["nat_acc"] = r.nat_acc;
  j["rob_acc"] = r.rob_acc;
  j["loss_at"] = r.loss_at;
  j["loss_scl"] = r.loss_scl;
  j["loss_vat"] = r.loss_vat;
  j["loss_total"] = r.loss_total;
  j["d_a_plus"] = r.d_a_plus;
  j["d_a_minus"] = r.d_a_minus;
  j["r_div"] = r.r_div ? nlohmann::ordered_json(*r.r_div) : nlohmann::ordered_json(nullptr);
  j["mean_pos"] = r.mean_pos;
  j["mean_neg"] = r.mean_neg;
  return j;
}

void write_summary(const std::filesystem::path& dir, const RunConfig& cfg, const TrainResult& res,
                   const std::string& status) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_entries(cfg)) config[k] = v;
  j["config"] = config;
  j["status"] = status;
  j["epochs_completed"] = res.epochs.size();
  j["final"] = nlohmann::ordered_json::array();
  for (const auto& r : res.final) j["final"].push_back(row_json(r));
  j["checkpoint"] = (dir / "model.ckpt").string();
  j["build_id"] = std::string(build_id());
  std::ofstream out(dir / "summary.json");
  out << j.dump(2) << '\n';
  if (!out) throw RuntimeFailure("cannot write " + (dir / "summary.json").string());
}

}  // namespace

std::string_view build_id() { return ASCL_BUILD_ID; }

std::string metrics_columns() {
  std::string out;
  for (const char* c : kColumns) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

void write_metrics_header(std::ostream& out) { out << kMetricsSchema << '\n' << metrics_columns() << '\n'; }

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << r.epoch << ',' << r.split << ',' << format_number(r.nat_acc) << ',' << format_number(r.rob_acc) << ','
      << format_number(r.loss_at) << ',' << format_number(r.loss_scl) << ',' << format_number(r.loss_vat) << ','
      << format_number(r.loss_total) << ',' << format_number(r.d_a_plus) << ',' << format_number(r.d_a_minus) << ','
      << (r.r_div ? format_number(*r.r_div) : std::string()) << ',' << format_number(r.mean_pos) << ','
      << format_number(r.mean_neg) << ',' << format_number(r.wall_time_s) << '\n';
}

std::vector<MetricsRow> read_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsSchema) throw FormatError("metrics: missing schema line", 0);
  if (!std::getline(in, line) || line != metrics_columns()) throw FormatError("metrics: unexpected column header", 1);
  std::vector<MetricsRow> rows;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != std::size(kColumns)) {
      throw FormatError("metrics line " + std::to_string(line_no) + ": expected " +
                            std::to_string(std::size(kColumns)) + " fields",
                        line_no);
    }
    MetricsRow r;
    r.epoch = static_cast<std::size_t>(parse_field(f[0], line_no, kColumns[0]));
    r.split = f[1];
    double* targets[] = {&r.nat_acc, &r.rob_acc, &r.loss_at, &r.loss_scl, &r.loss_vat, &r.loss_total,
                         &r.d_a_plus, &r.d_a_minus};
    for (std::size_t k = 0; k < std::size(targets); ++k) *targets[k] = parse_field(f[2 + k], line_no, kColumns[2 + k]);
    if (!f[10].empty()) r.r_div = parse_field(f[10], line_no, kColumns[10]);
    r.mean_pos = parse_field(f[11], line_no, kColumns[11]);
    r.mean_neg = parse_field(f[12], line_no, kColumns[12]);
    r.wall_time_s = parse_field(f[13], line_no, kColumns[13]);
    rows.push_back(std::move(r));
  }
  return rows;
}

ModelSpec model_spec_for(const RunConfig& cfg, const Dataset& data) {
  ModelSpec spec = cfg.model;
  spec.input_dim = data.dim;
  spec.num_classes = data.num_classes;
  return spec;
}

StepResult train_step(Model& model, Optimizer& opt, const Tensor& x, std::span<const std::size_t> labels,
                      const RunConfig& cfg, std::uint64_t attack_seed) {
  if (labels.size() < 2) throw ContractError("train_step: batch needs at least two samples");
  const Tensor x_nat = x.detach();
  const Tensor x_adv = pgd_attack(model, x_nat, labels, cfg.train_attack, attack_seed);
  opt.zero_grad();
  const auto b = total_loss(model, x_nat, x_adv, labels, cfg.strategy, cfg.weights, cfg.flags);
  StepResult out{b.at, b.scl, b.vat, b.total.item(), b.selection};
  if (!all_finite({out.loss_at, out.loss_scl, out.loss_vat, out.loss_total})) {
    throw RuntimeFailure("non-finite loss (at=" + format_number(out.loss_at) + ", scl=" + format_number(out.loss_scl) +
                         ", vat=" + format_number(out.loss_vat) + ")");
  }
  backward(b.total);
  opt.step();
  return out;
}

std::vector<MetricsRow> evaluate(const Model& model, const Dataset& data, const RunConfig& cfg,
                                 std::span<const AttackKind> attacks, std::span<const double> epsilons,
                                 std::size_t epoch) {
  if (attacks.empty()) throw ContractError("evaluate: no attacks requested");
  std::vector<double> grid(epsilons.begin(), epsilons.end());
  if (grid.empty()) grid.push_back(cfg.eval_attack.epsilon);
  const double ratio = cfg.eval_attack.epsilon > 0.0 ? cfg.eval_attack.eta / cfg.eval_attack.epsilon : 0.0;
  const Model frozen = model.frozen();
  const Tensor x = data.feature_tensor();
  const double nat_acc = accuracy(frozen, x, data.labels);
  const std::uint64_t seed = derive_seed(cfg.seed, kFinalEvalStream);

  std::vector<MetricsRow> rows;
  for (AttackKind kind : attacks) {
    for (double eps : grid) {
      AttackConfig ac = cfg.eval_attack;
      ac.epsilon = eps;
      if (ratio > 0.0 && eps > 0.0) ac.eta = eps * ratio;
      ac.validate();
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor adv = kind == AttackKind::none ? x : attack_dataset(kind, frozen, data, ac, seed);
      MetricsRow row;
      row.epoch = epoch;
      row.split = "test:" + attack_label(kind, kind == AttackKind::none ? 0.0 : eps);
      row.nat_acc = nat_acc;
      row.rob_acc = kind == AttackKind::none ? nat_acc : accuracy(frozen, adv, data.labels);
      const auto l = chunked_loss(frozen, x, adv, data.labels, cfg);
      row.loss_at = l.at;
      row.loss_scl = l.scl;
      row.loss_vat = l.vat;
      row.loss_total = l.total;
      row.mean_pos = l.pos;
      row.mean_neg = l.neg;
      fill_divergence(row, analyze_model(frozen, data, kind == AttackKind::none ? std::nullopt : std::optional(adv)));
      row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

TrainResult train(const RunConfig& cfg, const std::function<void(const MetricsRow&)>& on_epoch) {
  cfg.validate();
  auto [train_set, test_set] = make_datasets(cfg.data, cfg.seed);
  if (train_set.size() < 2) throw ConfigError("training set needs at least two samples");
  TrainResult res{Model(model_spec_for(cfg, train_set), derive_seed(cfg.seed, kInitStream)), std::move(train_set),
                  std::move(test_set), {}, {}};

  std::filesystem::path dir;
  std::ofstream metrics;
  if (!cfg.output_dir.empty()) {
    dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    metrics.open(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics) throw RuntimeFailure("cannot write " + (dir / "metrics.csv").string());
    write_metrics_header(metrics);
    metrics.flush();
  }

  Model& model = res.model;
  Optimizer opt(cfg.optimizer, model.parameters());
  const AugmentationSpec aug = cfg.data.augment ? AugmentationSpec{} : AugmentationSpec::none();
  AttackConfig cheap = cfg.eval_attack;
  cheap.steps = cfg.epoch_eval_steps;
  const Tensor x_test = res.test.feature_tensor();
  std::uint64_t step_index = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    opt.set_lr(cfg.lr_at(epoch));
    Rng shuffle_rng(derive_seed(cfg.seed, kShuffleStream, epoch));
    Rng aug_rng(derive_seed(cfg.seed, kAugmentStream, epoch));
    MetricsRow row;
    row.epoch = epoch + 1;
    row.split = "test";
    double weight = 0.0;
    for (const auto& batch : batch_order(res.train.size(), cfg.batch_size, shuffle_rng)) {
      Tensor xb = res.train.feature_tensor(batch);
      if (!aug.is_noop()) {
        xb = Tensor::matrix(batch.size(), res.train.dim,
                            augment(xb.data(), res.train.dim, res.train.image, aug, aug_rng));
      }
      const auto yb = res.train.labels_at(batch);
      StepResult s;
      try {
        s = train_step(model, opt, xb, yb, cfg, derive_seed(cfg.seed, kAttackStream, step_index++));
      } catch (const RuntimeFailure&) {
        if (metrics.is_open()) {
          MetricsRow diag = row;
          diag.split = "abort";
          diag.loss_at = diag.loss_scl = diag.loss_vat = diag.loss_total = std::nan("");
          write_metrics_row(metrics, diag);
          metrics.flush();
          write_summary(dir, cfg, res, "aborted");
        }
        throw;
      }
      const double w = static_cast<double>(batch.size());
      row.loss_at += w * s.loss_at;
      row.loss_scl += w * s.loss_scl;
      row.loss_vat += w * s.loss_vat;
      row.loss_total += w * s.loss_total;
      row.mean_pos += w * s.selection.mean_positives;
      row.mean_neg += w * s.selection.mean_negatives;
      weight += w;
    }
    row.loss_at /= weight;
    row.loss_scl /= weight;
    row.loss_vat /= weight;
    row.loss_total /= weight;
    row.mean_pos /= weight;
    row.mean_neg /= weight;

    const Model frozen = model.frozen();
    row.nat_acc = accuracy(frozen, x_test, res.test.labels);
    const Tensor adv = attack_dataset(AttackKind::pgd, frozen, res.test, cheap, derive_seed(cfg.seed, kEpochEvalStream, epoch));
    row.rob_acc = accuracy(frozen, adv, res.test.labels);
    fill_divergence(row, analyze_model(frozen, res.test, adv));
    row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (metrics.is_open()) {
      write_metrics_row(metrics, row);
      metrics.flush();
    }
    if (on_epoch) on_epoch(row);
    res.epochs.push_back(std::move(row));
  }

  if (cfg.epochs > 0) res.final = evaluate(model, res.test, cfg, cfg.eval_attacks, {}, cfg.epochs);
  if (!dir.empty()) {
    model.save(dir / "model.ckpt");
    write_summary(dir, cfg, res, "ok");
  }
  return res;
}

std::vector<SweepRow> sweep(const RunConfig& cfg, const SweepGrid& grid, std::size_t jobs) {
  if (grid.lambda_scl.empty() || grid.lambda_vat.empty() || grid.strategies.empty() || grid.seeds.empty()) {
    throw ConfigError("sweep grid must have at least one value per axis");
  }
  std::vector<SweepRow> cells;
  for (auto strategy : grid.strategies) {
    for (double ls : grid.lambda_scl) {
      for (double lv : grid.lambda_vat) {
        for (auto seed : grid.seeds) {
          SweepRow c;
          c.strategy = strategy;
          c.lambda_scl = ls;
          c.lambda_vat = lv;
          c.seed = seed;
          cells.push_back(c);
        }
      }
    }
  }
  std::stable_sort(cells.begin(), cells.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.strategy, a.lambda_scl, a.lambda_vat, a.seed) <
           std::tie(b.strategy, b.lambda_scl, b.lambda_vat, b.seed);
  });
  for (auto& c : cells) {
    RunConfig probe = cfg;
    probe.strategy = c.strategy;
    probe.weights.lambda_scl = c.lambda_scl;
    probe.weights.lambda_vat = c.lambda_vat;
    probe.validate();
  }

  auto run_cell = [&cfg](SweepRow& c) {
    RunConfig rc = cfg;
    rc.strategy = c.strategy;
    rc.weights.lambda_scl = c.lambda_scl;
    rc.weights.lambda_vat = c.lambda_vat;
    rc.seed = c.seed;
    if (!cfg.output_dir.empty()) {
      rc.output_dir = (std::filesystem::path(cfg.output_dir) /
                       (std::string(to_string(c.strategy)) + "_scl" + format_number(c.lambda_scl) + "_vat" +
                        format_number(c.lambda_vat) + "_seed" + std::to_string(c.seed)))
                          .string();
    }
    try {
      const auto res = train(rc);
      if (!res.final.empty()) {
        auto it = std::find_if(res.final.begin(), res.final.end(),
                               [](const MetricsRow& r) { return r.split.starts_with("test:pgd@"); });
        c.result = it != res.final.end() ? *it : res.final.front();
      }
      if (!res.epochs.empty()) {
        c.mean_pos = res.epochs.back().mean_pos;
        c.mean_neg = res.epochs.back().mean_neg;
      }
      c.ok = true;
    } catch (const std::exception& e) {
      c.ok = false;
      c.error = e.what();
    }
  };

  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, cells.size());
  if (jobs <= 1) {
    for (auto& c : cells) run_cell(c);
    return cells;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < jobs; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(cells[i]);
    });
  }
  for (auto& w : workers) w.join();
  return cells;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "strategy,lambda_scl,lambda_vat,seed,status,nat_acc,rob_acc,d_a_plus,d_a_minus,r_div,mean_pos,mean_neg,error\n";
  for (const auto& r : rows) {
    out << to_string(r.strategy) << ',' << format_number(r.lambda_scl) << ',' << format_number(r.lambda_vat) << ','
        << r.seed << ',' << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) {
      out << format_number(r.result.nat_acc) << ',' << format_number(r.result.rob_acc) << ','
          << format_number(r.result.d_a_plus) << ',' << format_number(r.result.d_a_minus) << ','
          << (r.result.r_div ? format_number(*r.result.r_div) : std::string()) << ',' << format_number(r.mean_pos)
          << ',' << format_number(r.mean_neg) << ',';
    } else {
      out << ",,,,,,,";
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << err << '\n';
  }
}

}  // namespace ascl
