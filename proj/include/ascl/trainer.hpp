#pragma once

// Training harness: the per-batch adversarial step, the epoch loop with
// end-of-epoch evaluation, final evaluation, hyperparameter sweeps and the
// metrics CSV.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ascl/config.hpp"
#include "ascl/data.hpp"
#include "ascl/model.hpp"
#include "ascl/optimizer.hpp"

namespace ascl {

inline constexpr std::string_view kMetricsSchema = "schema=asclmetrics.v1";

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  double nat_acc = 0.0;
  double rob_acc = 0.0;
  double loss_at = 0.0;
  double loss_scl = 0.0;
  double loss_vat = 0.0;
  double loss_total = 0.0;
  double d_a_plus = 0.0;
  double d_a_minus = 0.0;
  std::optional<double> r_div;
  double mean_pos = 0.0;
  double mean_neg = 0.0;
  double wall_time_s = 0.0;
};

/// Column header line (after the schema line).
std::string metrics_columns();
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
/// Parses a metrics file written by the functions above. Throws FormatError.
std::vector<MetricsRow> read_metrics(std::istream& in);

/// Model spec of cfg.model with input width and class count taken from the data.
ModelSpec model_spec_for(const RunConfig& cfg, const Dataset& data);

struct StepResult {
  double loss_at = 0.0;
  double loss_scl = 0.0;
  double loss_vat = 0.0;
  double loss_total = 0.0;
  SelectionStats selection;
};

/// One update: PGD against the current weights, joint forward, total loss,
/// backward and optimizer step. Throws RuntimeFailure on a non-finite loss
/// (the model is left untouched in that case).
StepResult train_step(Model& model, Optimizer& opt, const Tensor& x, std::span<const std::size_t> labels,
                      const RunConfig& cfg, std::uint64_t attack_seed);

struct TrainResult {
  Model model;
  Dataset train;
  Dataset test;
  std::vector<MetricsRow> epochs;   // one per epoch
  std::vector<MetricsRow> final;    // evaluate() rows for cfg.eval_attacks
};

/// Full run. With a nonempty cfg.output_dir writes metrics.csv (flushed per epoch),
/// model.ckpt and summary.json there. On a non-finite loss a diagnostic row with
/// split "abort" is written and RuntimeFailure is rethrown.
TrainResult train(const RunConfig& cfg, const std::function<void(const MetricsRow&)>& on_epoch = {});

/// One row per (attack, epsilon) with split "test:<attack>@<epsilon>". Losses and
/// selection counts are those of the run's objective on the attacked set.
/// Epsilons default to the eval attack's own; the step size keeps its ratio to epsilon.
std::vector<MetricsRow> evaluate(const Model& model, const Dataset& data, const RunConfig& cfg,
                                 std::span<const AttackKind> attacks, std::span<const double> epsilons = {},
                                 std::size_t epoch = 0);

struct SweepGrid {
  std::vector<double> lambda_scl{1.0};
  std::vector<double> lambda_vat{2.0};
  std::vector<SelectionStrategy> strategies{SelectionStrategy::global};
  std::vector<std::uint64_t> seeds{0};
};

struct SweepRow {
  SelectionStrategy strategy = SelectionStrategy::global;
  double lambda_scl = 0.0;
  double lambda_vat = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsRow result;  // final robust evaluation (first PGD row, else the first row)
  double mean_pos = 0.0;
  double mean_neg = 0.0;
};

/// One training run per grid cell, sorted by (strategy, lambda_scl, lambda_vat, seed).
/// Cells run on up to `jobs` threads (0: hardware concurrency). A cell's run seed
/// is its grid seed, so cells sharing a seed share data and initialization.
/// Failing cells are recorded and the sweep continues. Cell output directories
/// are created under cfg.output_dir when it is set.
std::vector<SweepRow> sweep(const RunConfig& cfg, const SweepGrid& grid, std::size_t jobs = 0);

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

/// Free-form build identifier (git describe of the source tree at configure time).
std::string_view build_id();

}  // namespace ascl
