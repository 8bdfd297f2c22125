#include "ascl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "ascl/errors.hpp"
#include "format.hpp"

namespace ascl {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = s.find(sep);
    out.push_back(trim(s.substr(0, pos)));
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + 1);
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + " (expected " +
                    std::string(expected) + ")");
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(parse_u64(key, v)); }

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += f(items[i]);
  }
  return out;
}

std::string_view to_string(ProjectionKind k) {
  switch (k) {
    case ProjectionKind::identity:
      return "identity";
    case ProjectionKind::linear:
      return "linear";
    case ProjectionKind::two_layer:
      return "two_layer";
  }
  return "identity";
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Key double_key(std::string name, Member member) {
  return {name, [name, member](RunConfig& c, std::string_view v) { member(c) = parse_double(name, v); },
          [member](const RunConfig& c) { return format_number(member(c)); }};
}

template <typename Member>
Key size_key(std::string name, Member member) {
  return {name, [name, member](RunConfig& c, std::string_view v) { member(c) = parse_size(name, v); },
          [member](const RunConfig& c) { return std::to_string(member(c)); }};
}

template <typename Member>
Key bool_key(std::string name, Member member) {
  return {name, [name, member](RunConfig& c, std::string_view v) { member(c) = parse_bool(name, v); },
          [member](const RunConfig& c) { return fmt_bool(member(c)); }};
}

#define ASCL_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back({"dataset",
                 [](RunConfig& c, std::string_view v) {
                   if (v != "two_moons" && v != "blobs" && v != "file") bad_value("dataset", v, "two_moons, blobs or file");
                   c.data.kind = std::string(v);
                 },
                 [](const RunConfig& c) { return c.data.kind; }});
    k.push_back({"train_path", [](RunConfig& c, std::string_view v) { c.data.train_path = std::string(v); },
                 [](const RunConfig& c) { return c.data.train_path; }});
    k.push_back({"test_path", [](RunConfig& c, std::string_view v) { c.data.test_path = std::string(v); },
                 [](const RunConfig& c) { return c.data.test_path; }});
    k.push_back(size_key("train_size", ASCL_FIELD(data.train_size)));
    k.push_back(size_key("test_size", ASCL_FIELD(data.test_size)));
    k.push_back(double_key("noise", ASCL_FIELD(data.noise)));
    k.push_back(size_key("classes", ASCL_FIELD(data.classes)));
    k.push_back(size_key("dim", ASCL_FIELD(data.dim)));
    k.push_back(double_key("spread", ASCL_FIELD(data.spread)));
    k.push_back(bool_key("augment", ASCL_FIELD(data.augment)));
    k.push_back({"image_shape",
                 [](RunConfig& c, std::string_view v) {
                   if (v.empty() || v == "none") {
                     c.data.image_shape.reset();
                     return;
                   }
                   const auto parts = split(v, 'x');
                   if (parts.size() != 3) bad_value("image_shape", v, "CxHxW");
                   ImageShape s{parse_size("image_shape", parts[0]), parse_size("image_shape", parts[1]),
                                parse_size("image_shape", parts[2])};
                   if (s.size() == 0) bad_value("image_shape", v, "positive extents");
                   c.data.image_shape = s;
                 },
                 [](const RunConfig& c) {
                   if (!c.data.image_shape) return std::string("none");
                   const auto& s = *c.data.image_shape;
                   return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
                 }});
    k.push_back({"hidden",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<std::size_t> widths;
                   for (auto part : split(v, ',')) {
                     const std::size_t w = parse_size("hidden", part);
                     if (w == 0) bad_value("hidden", v, "positive widths");
                     widths.push_back(w);
                   }
                   c.model.hidden_layers = std::move(widths);
                 },
                 [](const RunConfig& c) {
                   return join<std::size_t>(c.model.hidden_layers, [](const std::size_t& w) { return std::to_string(w); });
                 }});
    k.push_back({"projection",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "identity") c.model.projection.kind = ProjectionKind::identity;
                   else if (v == "linear") c.model.projection.kind = ProjectionKind::linear;
                   else if (v == "two_layer") c.model.projection.kind = ProjectionKind::two_layer;
                   else bad_value("projection", v, "identity, linear or two_layer");
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.model.projection.kind)); }});
    k.push_back(size_key("proj_mid", ASCL_FIELD(model.projection.mid)));
    k.push_back(size_key("proj_dim", ASCL_FIELD(model.projection.out_dim)));
    k.push_back(double_key("train_eps", ASCL_FIELD(train_attack.epsilon)));
    k.push_back(double_key("train_eta", ASCL_FIELD(train_attack.eta)));
    k.push_back(size_key("train_steps", ASCL_FIELD(train_attack.steps)));
    k.push_back(bool_key("train_random_init", ASCL_FIELD(train_attack.random_init)));
    k.push_back(double_key("eval_eps", ASCL_FIELD(eval_attack.epsilon)));
    k.push_back(double_key("eval_eta", ASCL_FIELD(eval_attack.eta)));
    k.push_back(size_key("eval_steps", ASCL_FIELD(eval_attack.steps)));
    k.push_back(bool_key("eval_random_init", ASCL_FIELD(eval_attack.random_init)));
    k.push_back({"eval_attacks",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<AttackKind> kinds;
                   for (auto part : split(v, ',')) kinds.push_back(parse_attack_kind(part));
                   c.eval_attacks = std::move(kinds);
                 },
                 [](const RunConfig& c) {
                   return join<AttackKind>(c.eval_attacks, [](const AttackKind& a) { return std::string(to_string(a)); });
                 }});
    k.push_back(size_key("epoch_eval_steps", ASCL_FIELD(epoch_eval_steps)));
    k.push_back({"strategy", [](RunConfig& c, std::string_view v) { c.strategy = parse_strategy(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.strategy)); }});
    k.push_back(double_key("lambda_scl", ASCL_FIELD(weights.lambda_scl)));
    k.push_back(double_key("lambda_vat", ASCL_FIELD(weights.lambda_vat)));
    k.push_back(double_key("tau", ASCL_FIELD(weights.tau)));
    k.push_back({"similarity", [](RunConfig& c, std::string_view v) { c.weights.similarity = Similarity::parse(v); },
                 [](const RunConfig& c) { return c.weights.similarity.to_string(); }});
    k.push_back(bool_key("nat_ce", ASCL_FIELD(flags.nat_ce)));
    k.push_back(bool_key("use_vat", ASCL_FIELD(flags.use_vat)));
    k.push_back({"optimizer",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "adam") c.optimizer.kind = OptimizerKind::adam;
                   else if (v == "sgd") c.optimizer.kind = OptimizerKind::sgd;
                   else bad_value("optimizer", v, "adam or sgd");
                 },
                 [](const RunConfig& c) { return std::string(c.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"); }});
    k.push_back(double_key("lr", ASCL_FIELD(optimizer.lr)));
    k.push_back(double_key("beta1", ASCL_FIELD(optimizer.beta1)));
    k.push_back(double_key("beta2", ASCL_FIELD(optimizer.beta2)));
    k.push_back(double_key("momentum", ASCL_FIELD(optimizer.momentum)));
    k.push_back(double_key("weight_decay", ASCL_FIELD(optimizer.weight_decay)));
    k.push_back({"schedule",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<ScheduleEntry> entries;
                   if (!v.empty() && v != "none") {
                     for (auto part : split(v, ',')) {
                       const auto colon = part.find(':');
                       if (colon == std::string_view::npos) bad_value("schedule", v, "epoch:lr pairs");
                       entries.push_back({parse_size("schedule", trim(part.substr(0, colon))),
                                          parse_double("schedule", trim(part.substr(colon + 1)))});
                     }
                   }
                   c.schedule = std::move(entries);
                 },
                 [](const RunConfig& c) {
                   if (c.schedule.empty()) return std::string("none");
                   return join<ScheduleEntry>(c.schedule, [](const ScheduleEntry& e) {
                     return std::to_string(e.epoch) + ":" + format_number(e.lr);
                   });
                 }});
    k.push_back(size_key("epochs", ASCL_FIELD(epochs)));
    k.push_back(size_key("batch_size", ASCL_FIELD(batch_size)));
    k.push_back({"seed", [](RunConfig& c, std::string_view v) { c.seed = parse_u64("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    k.push_back({"output_dir", [](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); },
                 [](const RunConfig& c) { return c.output_dir; }});
    return k;
  }();
  return table;
}

#undef ASCL_FIELD

}  // namespace

void RunConfig::validate() const {
  if (data.kind == "file") {
    if (data.train_path.empty() || data.test_path.empty()) {
      throw ConfigError("dataset=file needs train_path and test_path");
    }
  } else {
    if (data.train_size < 2) throw ConfigError("train_size must be at least 2");
    if (data.test_size < 1) throw ConfigError("test_size must be at least 1");
    if (!(data.noise >= 0.0)) throw ConfigError("noise must be >= 0");
    if (!(data.spread >= 0.0)) throw ConfigError("spread must be >= 0");
    if (data.kind == "blobs" && (data.classes < 2 || data.dim == 0)) {
      throw ConfigError("blobs need at least two classes and a positive dimension");
    }
  }
  if (data.augment && !data.image_shape) throw ConfigError("augment needs image-shaped data (set image_shape)");
  model.validate();
  train_attack.validate();
  eval_attack.validate();
  if (eval_attacks.empty()) throw ConfigError("eval_attacks must name at least one attack");
  weights.validate();
  if (!(optimizer.lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!schedule.empty()) {
    if (schedule.front().epoch != 0) throw ConfigError("schedule must start at epoch 0");
    for (std::size_t i = 1; i < schedule.size(); ++i) {
      if (schedule[i].epoch <= schedule[i - 1].epoch) throw ConfigError("schedule epochs must be strictly increasing");
    }
    for (const auto& e : schedule) {
      if (!(e.lr >= 0.0)) throw ConfigError("schedule learning rates must be >= 0");
    }
  }
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
}

double RunConfig::lr_at(std::size_t epoch) const {
  double lr = optimizer.lr;
  for (const auto& e : schedule) {
    if (e.epoch <= epoch) lr = e.lr;
  }
  return lr;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto& table = key_table();
  const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == key; });
  if (it == table.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->set(cfg, trim(value));
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    try {
      apply_setting(base, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : key_table()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return keys;
}

std::pair<Dataset, Dataset> make_datasets(const DataConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == "file") {
    auto load = [](const std::string& path) {
      const std::filesystem::path p(path);
      return p.extension() == ".csv" ? load_csv(p) : load_dataset(p);
    };
    Dataset train = load(cfg.train_path);
    Dataset test = load(cfg.test_path);
    if (train.dim != test.dim) throw ConfigError("train and test files have different dimensions");
    const std::size_t classes = std::max(train.num_classes, test.num_classes);
    train.num_classes = test.num_classes = classes;
    train.split = Split::train;
    test.split = Split::test;
    train.image = test.image = cfg.image_shape;
    train.validate();
    test.validate();
    return {std::move(train), std::move(test)};
  }
  const std::uint64_t data_seed = derive_seed(seed, 0xda7a);
  const std::size_t total = cfg.train_size + cfg.test_size;
  Dataset full;
  if (cfg.kind == "two_moons") {
    full = make_two_moons(total, cfg.noise, data_seed);
  } else if (cfg.kind == "blobs") {
    const std::size_t per_class = (total + cfg.classes - 1) / cfg.classes;
    full = make_blobs(cfg.classes, per_class, cfg.dim, cfg.spread, data_seed);
  } else {
    throw ConfigError("unknown dataset kind '" + cfg.kind + "'");
  }
  const std::size_t test_count = std::min(cfg.test_size, full.size() - 1);
  return train_test_split(full, test_count, derive_seed(data_seed, 1));
}

}  // namespace ascl
