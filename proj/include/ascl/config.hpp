#pragma once

// Run configuration and its `key = value` text format.
//
// Lines hold `key = value`; `#` starts a comment; blank lines are ignored.
// Unknown keys and malformed values are ConfigErrors. Recognized keys:
//
//   dataset            two_moons | blobs | file
//   train_path         dataset file for dataset=file (.bin or .csv)
//   test_path          dataset file for dataset=file
//   train_size         synthetic training samples
//   test_size          synthetic test samples
//   noise              two-moons noise
//   classes, dim       blobs class count and dimension
//   spread             blobs standard deviation
//   augment            true | false (needs image_shape)
//   image_shape        CxHxW for file datasets
//   hidden             comma-separated hidden widths; the last is the latent width
//   projection         identity | linear | two_layer
//   proj_mid, proj_dim projection head widths
//   train_eps, train_eta, train_steps, train_random_init
//   eval_eps, eval_eta, eval_steps, eval_random_init
//   eval_attacks       comma-separated subset of none,pgd,mpgd for the final evaluation
//   epoch_eval_steps   attack steps of the cheap per-epoch robust evaluation
//   strategy           global | hard | soft | leaked
//   lambda_scl, lambda_vat, tau
//   similarity         cosine | lp:<p>
//   nat_ce, use_vat    true | false
//   optimizer          adam | sgd
//   lr, beta1, beta2, momentum, weight_decay
//   schedule           epoch:lr pairs, e.g. 0:1e-3,80:1e-4 (epochs strictly increasing from 0)
//   epochs, batch_size, seed
//   output_dir         directory for metrics.csv, model.ckpt and summary.json

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ascl/adversary.hpp"
#include "ascl/data.hpp"
#include "ascl/loss.hpp"
#include "ascl/model.hpp"

namespace ascl {

struct DataConfig {
  std::string kind = "two_moons";
  std::string train_path;
  std::string test_path;
  std::size_t train_size = 1000;
  std::size_t test_size = 500;
  double noise = 0.1;
  std::size_t classes = 10;
  std::size_t dim = 10;
  double spread = 0.3;
  bool augment = false;
  std::optional<ImageShape> image_shape;
};

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct ScheduleEntry {
  std::size_t epoch = 0;
  double lr = 0.0;
  bool operator==(const ScheduleEntry&) const = default;
};

struct RunConfig {
  DataConfig data;
  ModelSpec model;
  AttackConfig train_attack;
  AttackConfig eval_attack;
  std::vector<AttackKind> eval_attacks{AttackKind::pgd};
  std::size_t epoch_eval_steps = 10;
  LossWeights weights;
  SelectionStrategy strategy = SelectionStrategy::global;
  LossFlags flags;
  OptimizerConfig optimizer;
  std::vector<ScheduleEntry> schedule;  // empty: constant optimizer.lr
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::string output_dir;  // empty: no files written

  /// Throws ConfigError.
  void validate() const;
  /// Learning rate in effect at `epoch` (0-based).
  double lr_at(std::size_t epoch) const;
};

/// Sets one key. Throws ConfigError for unknown keys or malformed values.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Parses the text format on top of `base`.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Every key with its current value, in documented order. Feeding the pairs back
/// through apply_setting reproduces the configuration.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string format_config(const RunConfig& cfg);

/// All recognized keys, in documented order.
const std::vector<std::string>& config_keys();

/// Train and test splits described by cfg.data; synthetic data is drawn from a stream of `seed`.
std::pair<Dataset, Dataset> make_datasets(const DataConfig& cfg, std::uint64_t seed);

}  // namespace ascl
