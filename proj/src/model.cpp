#include "ascl/model.hpp"

#include <cmath>
#include <string>

#include "ascl/errors.hpp"
#include "ascl/rng.hpp"
#include "binary_io.hpp"

namespace ascl {

namespace {

constexpr std::string_view kCheckpointMagic{"ASCLCKP1", 8};

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = rng.uniform(-limit, limit);
  return Tensor::matrix(fan_in, fan_out, std::move(w), true);
}

Tensor affine(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b) {
  Tensor y = matmul(x, w);
  return b ? add(y, *b) : y;
}

}  // namespace

std::size_t ModelSpec::latent_dim() const {
  if (hidden_layers.empty()) throw ConfigError("model needs at least one hidden layer");
  return hidden_layers.back();
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (hidden_layers.empty()) throw ConfigError("model needs at least one hidden layer (no exposed latent otherwise)");
  for (std::size_t w : hidden_layers) {
    if (w == 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (activation != Activation::relu) throw ConfigError("only relu activation is supported");
  if (projection.kind != ProjectionKind::identity && projection.out_dim == 0) {
    throw ConfigError("projection output width must be positive");
  }
  if (projection.kind == ProjectionKind::two_layer && projection.mid == 0) {
    throw ConfigError("projection mid width must be positive");
  }
}

PredictionSnapshot make_snapshot(const Tensor& logits_nat, const Tensor& logits_adv) {
  if (logits_nat.shape() != logits_adv.shape() || logits_nat.rank() != 2) {
    throw ContractError("snapshot: natural and adversarial logits must both be N x C");
  }
  PredictionSnapshot s;
  s.n = logits_nat.rows();
  s.num_classes = logits_nat.cols();
  s.logits_nat.assign(logits_nat.data().begin(), logits_nat.data().end());
  s.logits_adv.assign(logits_adv.data().begin(), logits_adv.data().end());
  const Tensor pn = softmax(logits_nat.detach(), 1);
  const Tensor pa = softmax(logits_adv.detach(), 1);
  s.probs_nat.assign(pn.data().begin(), pn.data().end());
  s.probs_adv.assign(pa.data().begin(), pa.data().end());
  s.preds_nat = argmax(logits_nat, 1);
  s.preds_adv = argmax(logits_adv, 1);
  return s;
}

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(seed);
  std::size_t fan_in = spec_.input_dim;
  for (std::size_t width : spec_.hidden_layers) {
    encoder_.push_back({glorot(fan_in, width, rng), Tensor::zeros({1, width}, true)});
    fan_in = width;
  }
  classifier_ = {glorot(fan_in, spec_.num_classes, rng), Tensor::zeros({1, spec_.num_classes}, true)};
  const auto& proj = spec_.projection;
  if (proj.kind == ProjectionKind::linear) {
    projection_.push_back({glorot(fan_in, proj.out_dim, rng), std::nullopt});
  } else if (proj.kind == ProjectionKind::two_layer) {
    projection_.push_back({glorot(fan_in, proj.mid, rng), std::nullopt});
    projection_.push_back({glorot(proj.mid, proj.out_dim, rng), std::nullopt});
  }
}

Model::Linear Model::copy_linear(const Linear& l, bool requires_grad) {
  Linear out{Tensor(l.weight.shape(), {l.weight.data().begin(), l.weight.data().end()}, requires_grad), std::nullopt};
  if (l.bias) out.bias = Tensor(l.bias->shape(), {l.bias->data().begin(), l.bias->data().end()}, requires_grad);
  return out;
}

Model Model::copy_with(bool requires_grad) const {
  Model m;
  m.spec_ = spec_;
  for (const auto& l : encoder_) m.encoder_.push_back(copy_linear(l, requires_grad));
  m.classifier_ = copy_linear(classifier_, requires_grad);
  for (const auto& l : projection_) m.projection_.push_back(copy_linear(l, requires_grad));
  return m;
}

Model::Model(const Model& other) : Model(other.copy_with(other.classifier_.weight.requires_grad())) {}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = other.copy_with(other.classifier_.weight.requires_grad());
  return *this;
}

Model Model::frozen() const { return copy_with(false); }

Tensor Model::encode(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != spec_.input_dim) {
    throw DimensionError("encode: expected N x " + std::to_string(spec_.input_dim) + " input");
  }
  Tensor h = x;
  for (const auto& layer : encoder_) h = relu(affine(h, layer.weight, layer.bias));
  return h;
}

Tensor Model::classify(const Tensor& z) const {
  if (z.rank() != 2 || z.cols() != spec_.latent_dim()) {
    throw DimensionError("classify: expected N x " + std::to_string(spec_.latent_dim()) + " latent");
  }
  return affine(z, classifier_.weight, classifier_.bias);
}

Tensor Model::forward(const Tensor& x) const { return classify(encode(x)); }

Tensor Model::project(const Tensor& z) const {
  if (z.rank() != 2 || z.cols() != spec_.latent_dim()) throw DimensionError("project: latent width mismatch");
  switch (spec_.projection.kind) {
    case ProjectionKind::identity:
      return z;
    case ProjectionKind::linear:
      return matmul(z, projection_[0].weight);
    case ProjectionKind::two_layer:
      return matmul(relu(matmul(z, projection_[0].weight)), projection_[1].weight);
  }
  return z;
}

PredictionSnapshot Model::snapshot(const Tensor& x_nat, const Tensor& x_adv) const {
  if (x_nat.rank() != 2 || x_adv.rank() != 2 || x_nat.rows() != x_adv.rows()) {
    throw ContractError("snapshot: natural and adversarial batches must have the same size");
  }
  const Model f = frozen();
  return make_snapshot(f.forward(x_nat.detach()), f.forward(x_adv.detach()));
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : encoder_) {
    out.push_back(l.weight);
    out.push_back(*l.bias);
  }
  out.push_back(classifier_.weight);
  out.push_back(*classifier_.bias);
  for (const auto& l : projection_) out.push_back(l.weight);
  return out;
}

// Checkpoint layout (little-endian):
//   "ASCLCKP1"
//   u32 input_dim, u32 n_hidden, u32 width[n_hidden], u32 num_classes,
//   u8 activation, u8 projection kind, u32 projection mid, u32 projection out
//   u32 n_arrays, then per array: u32 rows, u32 cols, rows*cols f64
void Model::save(const std::filesystem::path& path) const {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(spec_.input_dim));
  w.u32(static_cast<std::uint32_t>(spec_.hidden_layers.size()));
  for (std::size_t width : spec_.hidden_layers) w.u32(static_cast<std::uint32_t>(width));
  w.u32(static_cast<std::uint32_t>(spec_.num_classes));
  w.u8(static_cast<std::uint8_t>(spec_.activation));
  w.u8(static_cast<std::uint8_t>(spec_.projection.kind));
  w.u32(static_cast<std::uint32_t>(spec_.projection.mid));
  w.u32(static_cast<std::uint32_t>(spec_.projection.out_dim));
  const auto params = parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.rows()));
    w.u32(static_cast<std::uint32_t>(p.cols()));
    for (double v : p.data()) w.f64(v);
  }
  w.write_file(path);
}

Model Model::load(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  if (r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic) throw FormatError("bad checkpoint magic", 0);
  ModelSpec spec;
  spec.input_dim = r.u32("input_dim");
  const std::size_t hidden_at = r.offset();
  const std::uint32_t n_hidden = r.u32("hidden layer count");
  if (n_hidden > 1024) throw FormatError("implausible hidden layer count", hidden_at);
  spec.hidden_layers.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) spec.hidden_layers.push_back(r.u32("hidden width"));
  spec.num_classes = r.u32("num_classes");
  const std::size_t act_at = r.offset();
  const std::uint8_t act = r.u8("activation");
  if (act > 1) throw FormatError("unknown activation code", act_at);
  spec.activation = static_cast<Activation>(act);
  const std::size_t proj_at = r.offset();
  const std::uint8_t proj = r.u8("projection kind");
  if (proj > 2) throw FormatError("unknown projection code", proj_at);
  spec.projection.kind = static_cast<ProjectionKind>(proj);
  spec.projection.mid = r.u32("projection mid");
  spec.projection.out_dim = r.u32("projection out");
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid model spec: ") + e.what(), proj_at);
  }

  Model m(spec, 0);
  auto params = m.parameters();
  const std::size_t count_at = r.offset();
  if (r.u32("array count") != params.size()) throw FormatError("array count does not match model spec", count_at);
  for (auto& p : params) {
    const std::size_t shape_at = r.offset();
    const std::uint32_t rows = r.u32("array rows");
    const std::uint32_t cols = r.u32("array cols");
    if (rows != p.rows() || cols != p.cols()) throw FormatError("array shape does not match model spec", shape_at);
    auto dst = p.mutable_data();
    for (double& v : dst) v = r.f64("weights");
  }
  r.expect_end();
  return m;
}

}  // namespace ascl
