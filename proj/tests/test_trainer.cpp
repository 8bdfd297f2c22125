#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "ascl/errors.hpp"
#include "ascl/trainer.hpp"

using namespace ascl;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.data.train_size = 96;
  c.data.test_size = 40;
  c.model.hidden_layers = {24, 16};
  c.epochs = 2;
  c.batch_size = 32;
  c.train_attack.steps = 3;
  c.eval_attack.steps = 3;
  c.epoch_eval_steps = 2;
  c.seed = 5;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ascl_trainer_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void expect_same_params(const Model& a, const Model& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(values(pa[i]), values(pb[i])) << "parameter " << i;
}

// Metrics rows without the wall clock column.
void expect_same_rows(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].split, b[i].split);
    EXPECT_EQ(a[i].nat_acc, b[i].nat_acc);
    EXPECT_EQ(a[i].rob_acc, b[i].rob_acc);
    EXPECT_EQ(a[i].loss_total, b[i].loss_total);
    EXPECT_EQ(a[i].d_a_plus, b[i].d_a_plus);
    EXPECT_EQ(a[i].d_a_minus, b[i].d_a_minus);
    EXPECT_EQ(a[i].r_div, b[i].r_div);
    EXPECT_EQ(a[i].mean_pos, b[i].mean_pos);
  }
}

}  // namespace

TEST(TrainStep, TotalIsTheWeightedSumOfTerms) {
  RunConfig cfg = small_config();
  cfg.weights.lambda_scl = 0.7;
  cfg.weights.lambda_vat = 1.3;
  const auto [train, test] = make_datasets(cfg.data, 1);
  for (auto strategy : kAllStrategies) {
    cfg.strategy = strategy;
    Model model(model_spec_for(cfg, train), 3);
    Optimizer opt(cfg.optimizer, model.parameters());
    std::vector<std::size_t> idx(32);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const StepResult s = train_step(model, opt, train.feature_tensor(idx), train.labels_at(idx), cfg, 9);
    EXPECT_NEAR(s.loss_total, s.loss_at + 0.7 * s.loss_scl + 1.3 * s.loss_vat, 1e-12);
    EXPECT_GE(s.loss_scl, 0.0);
    EXPECT_GE(s.loss_vat, 0.0);
    EXPECT_GE(s.selection.mean_positives, 1.0);
  }
}

TEST(TrainStep, ZeroWeightsReduceToAdversarialTraining) {
  RunConfig cfg = small_config();
  cfg.weights.lambda_scl = 0.0;
  cfg.weights.lambda_vat = 0.0;
  const auto [train, test] = make_datasets(cfg.data, 1);
  Model model(model_spec_for(cfg, train), 3);
  Optimizer opt(cfg.optimizer, model.parameters());
  std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5, 6, 7};
  const StepResult s = train_step(model, opt, train.feature_tensor(idx), train.labels_at(idx), cfg, 1);
  EXPECT_EQ(s.loss_total, s.loss_at);
}

TEST(Train, SameSeedGivesIdenticalRuns) {
  const RunConfig cfg = small_config();
  const TrainResult a = train(cfg);
  const TrainResult b = train(cfg);
  ASSERT_EQ(a.epochs.size(), 2u);
  expect_same_rows(a.epochs, b.epochs);
  expect_same_rows(a.final, b.final);
  expect_same_params(a.model, b.model);
  RunConfig other = cfg;
  other.seed = 6;
  EXPECT_NE(values(train(other).model.parameters()[0]), values(a.model.parameters()[0]));
}

TEST(Train, RowsAreWellFormed) {
  const TrainResult r = train(small_config());
  for (const auto& row : r.epochs) {
    EXPECT_EQ(row.split, "test");
    EXPECT_GE(row.nat_acc, 0.0);
    EXPECT_LE(row.nat_acc, 1.0);
    EXPECT_LE(row.rob_acc, row.nat_acc + 1e-12);
    EXPECT_NEAR(row.loss_total, row.loss_at + row.loss_scl + 2.0 * row.loss_vat, 1e-10);
    EXPECT_GE(row.wall_time_s, 0.0);
  }
  EXPECT_EQ(r.epochs[0].epoch, 1u);
  ASSERT_EQ(r.final.size(), 1u);
  EXPECT_TRUE(r.final[0].split.starts_with("test:pgd@"));
}

TEST(Train, ZeroLearningRateKeepsInitialWeights) {
  RunConfig cfg = small_config();
  cfg.optimizer.lr = 0.0;
  const TrainResult r = train(cfg);
  const auto [train_set, test_set] = make_datasets(cfg.data, cfg.seed);
  // Initialization stream tag of the trainer.
  expect_same_params(r.model, Model(model_spec_for(cfg, train_set), derive_seed(cfg.seed, 0x1417)));
}

TEST(Train, ScheduleStopsUpdatesAfterItsBreakpoint) {
  RunConfig cfg = small_config();
  cfg.schedule = {{0, 1e-2}, {1, 0.0}};
  cfg.epochs = 1;
  const TrainResult one = train(cfg);
  cfg.epochs = 3;
  const TrainResult three = train(cfg);
  expect_same_params(one.model, three.model);
}

TEST(Train, ZeroEpochsWritesHeaderAndInitialModel) {
  RunConfig cfg = small_config();
  cfg.epochs = 0;
  const auto dir = temp_dir("zero");
  cfg.output_dir = dir.string();
  const TrainResult r = train(cfg);
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_TRUE(r.final.empty());
  std::ifstream in(dir / "metrics.csv");
  EXPECT_TRUE(read_metrics(in).empty());
  EXPECT_EQ(slurp(dir / "metrics.csv"), std::string(kMetricsSchema) + "\n" + metrics_columns() + "\n");
  expect_same_params(Model::load(dir / "model.ckpt"), r.model);
  EXPECT_TRUE(std::filesystem::exists(dir / "summary.json"));
  std::filesystem::remove_all(dir);
}

TEST(Train, OutputFilesAreByteIdenticalAcrossRunsUpToWallTime) {
  RunConfig cfg = small_config();
  const auto d1 = temp_dir("det1"), d2 = temp_dir("det2");
  cfg.output_dir = d1.string();
  train(cfg);
  cfg.output_dir = d2.string();
  train(cfg);
  EXPECT_EQ(slurp(d1 / "model.ckpt"), slurp(d2 / "model.ckpt"));
  std::ifstream a(d1 / "metrics.csv"), b(d2 / "metrics.csv");
  expect_same_rows(read_metrics(a), read_metrics(b));
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST(Train, CheckpointReproducesFinalEvaluation) {
  RunConfig cfg = small_config();
  cfg.eval_attacks = {AttackKind::none, AttackKind::pgd, AttackKind::mpgd};
  const auto dir = temp_dir("ckpt");
  cfg.output_dir = dir.string();
  const TrainResult r = train(cfg);
  const Model loaded = Model::load(dir / "model.ckpt");
  const auto rows = evaluate(loaded, r.test, cfg, cfg.eval_attacks, {}, cfg.epochs);
  expect_same_rows(rows, r.final);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].nat_acc, rows[0].rob_acc);
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, EpsilonGridRowsAndZeroEpsilon) {
  const RunConfig cfg = small_config();
  const TrainResult r = train(cfg);
  const std::vector<AttackKind> attacks = {AttackKind::pgd};
  const std::vector<double> eps = {0.0, 0.05, 0.1};
  const auto rows = evaluate(r.model, r.test, cfg, attacks, eps);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rob_acc, rows[0].nat_acc);
  for (const auto& row : rows) EXPECT_TRUE(row.split.starts_with("test:pgd@")) << row.split;
  EXPECT_LE(rows[2].rob_acc, rows[0].rob_acc);
}

TEST(Train, NonFiniteLossAbortsWithDiagnosticRow) {
  RunConfig cfg = small_config();
  cfg.optimizer.kind = OptimizerKind::sgd;
  cfg.optimizer.lr = 1e300;
  const auto dir = temp_dir("abort");
  cfg.output_dir = dir.string();
  EXPECT_THROW(train(cfg), RuntimeFailure);
  std::ifstream in(dir / "metrics.csv");
  const auto rows = read_metrics(in);
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows.back().split, "abort");
  EXPECT_TRUE(std::isnan(rows.back().loss_total));
  EXPECT_NE(slurp(dir / "summary.json").find("aborted"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Metrics, RoundTripAndMalformedInput) {
  MetricsRow row;
  row.epoch = 3;
  row.split = "test:pgd@0.05";
  row.nat_acc = 0.875;
  row.rob_acc = 0.5;
  row.loss_total = 1.0 / 3.0;
  row.r_div = 0.125;
  MetricsRow undefined = row;
  undefined.r_div.reset();
  std::stringstream ss;
  write_metrics_header(ss);
  write_metrics_row(ss, row);
  write_metrics_row(ss, undefined);
  const auto back = read_metrics(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].split, row.split);
  EXPECT_EQ(back[0].loss_total, row.loss_total);
  EXPECT_EQ(back[0].r_div, row.r_div);
  EXPECT_FALSE(back[1].r_div.has_value());

  std::stringstream bad_schema("schema=other\n" + metrics_columns() + "\n");
  EXPECT_THROW(read_metrics(bad_schema), FormatError);
  std::stringstream bad_field(std::string(kMetricsSchema) + "\n" + metrics_columns() + "\n1,test,x\n");
  EXPECT_THROW(read_metrics(bad_field), FormatError);
}

TEST(Sweep, SingleCellMatchesTrain) {
  RunConfig cfg = small_config();
  SweepGrid grid;
  grid.strategies = {SelectionStrategy::leaked_ls};
  grid.lambda_scl = {0.5};
  grid.lambda_vat = {1.0};
  grid.seeds = {11};
  const auto rows = sweep(cfg, grid, 1);
  ASSERT_EQ(rows.size(), 1u);
  ASSERT_TRUE(rows[0].ok) << rows[0].error;
  cfg.strategy = SelectionStrategy::leaked_ls;
  cfg.weights.lambda_scl = 0.5;
  cfg.weights.lambda_vat = 1.0;
  cfg.seed = 11;
  const TrainResult r = train(cfg);
  expect_same_rows({rows[0].result}, {r.final[0]});
  EXPECT_EQ(rows[0].mean_pos, r.epochs.back().mean_pos);
}

TEST(Sweep, CellsAreSortedAndThreadCountDoesNotMatter) {
  RunConfig cfg = small_config();
  cfg.epochs = 1;
  SweepGrid grid;
  grid.strategies = {SelectionStrategy::leaked_ls, SelectionStrategy::global};
  grid.lambda_scl = {1.0, 0.0};
  grid.seeds = {2, 1};
  const auto serial = sweep(cfg, grid, 1);
  const auto threaded = sweep(cfg, grid, 3);
  ASSERT_EQ(serial.size(), 8u);
  EXPECT_EQ(serial.front().strategy, SelectionStrategy::global);
  EXPECT_EQ(serial.front().lambda_scl, 0.0);
  EXPECT_EQ(serial.front().seed, 1u);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].seed, threaded[i].seed);
    expect_same_rows({serial[i].result}, {threaded[i].result});
  }
  std::stringstream csv;
  write_sweep_csv(csv, serial);
  std::string header;
  std::getline(csv, header);
  EXPECT_TRUE(header.starts_with("strategy,lambda_scl,lambda_vat,seed,status"));
}

TEST(Sweep, FailingCellsAreRecorded) {
  RunConfig cfg = small_config();
  cfg.optimizer.kind = OptimizerKind::sgd;
  cfg.optimizer.lr = 1e300;
  SweepGrid grid;
  const auto rows = sweep(cfg, grid, 1);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_FALSE(rows[0].ok);
  EXPECT_FALSE(rows[0].error.empty());
}
