#include "fpx/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "engine.hpp"
#include "fpx/error.hpp"
#include "fpx/rng.hpp"
#include "hash.hpp"

namespace fpx {

using nlohmann::json;

std::size_t shape_size(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(std::max(d, 0)); });
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), values(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  check(values.size() == shape_size(shape), ErrorCode::ShapeMismatch, "tensor values do not match shape");
}

std::string_view to_string(Task t) noexcept {
  switch (t) {
    case Task::Fakeness: return "fakeness";
    case Task::Alteration: return "alteration";
    case Task::Gender: return "gender";
    case Task::Hand: return "hand";
    case Task::Finger: return "finger";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view s) {
  for (auto t : kAllTasks) {
    if (s == to_string(t)) return t;
  }
  return std::nullopt;
}

int num_classes(Task t) noexcept {
  switch (t) {
    case Task::Fakeness: return 2;
    case Task::Alteration: return 4;
    case Task::Gender: return 2;
    case Task::Hand: return 2;
    case Task::Finger: return 5;
  }
  return 0;
}

std::vector<std::string> class_names(Task t) {
  switch (t) {
    case Task::Fakeness: return {"Altered", "Real"};
    case Task::Alteration: return {"Obl", "Cr", "Z-cut", "Real"};
    case Task::Gender: return {"Male", "Female"};
    case Task::Hand: return {"Left", "Right"};
    case Task::Finger: return {"Thumb", "Index", "Middle", "Ring", "Little"};
  }
  return {};
}

int task_label(Task t, const RecordLabel& label) noexcept {
  switch (t) {
    case Task::Fakeness: return label.alteration == Alteration::Real ? 1 : 0;
    case Task::Alteration:
      switch (label.alteration) {
        case Alteration::Obliteration: return 0;
        case Alteration::CentralRotation: return 1;
        case Alteration::ZCut: return 2;
        case Alteration::Real: return 3;
      }
      return 3;
    case Task::Gender: return static_cast<int>(label.gender);
    case Task::Hand: return static_cast<int>(label.hand);
    case Task::Finger: return static_cast<int>(label.finger);
  }
  return 0;
}

std::string_view to_string(ScalePreset p) noexcept {
  switch (p) {
    case ScalePreset::Toy: return "toy";
    case ScalePreset::Small: return "small";
    case ScalePreset::Paper: return "paper";
  }
  return "?";
}

std::optional<ScalePreset> parse_preset(std::string_view s) {
  for (auto p : {ScalePreset::Toy, ScalePreset::Small, ScalePreset::Paper}) {
    if (s == to_string(p)) return p;
  }
  return std::nullopt;
}

ModelConfig ModelConfig::preset(ScalePreset p) {
  ModelConfig c;
  c.scale_preset = p;
  switch (p) {
    case ScalePreset::Toy:
      c.input_height = c.input_width = 128;
      c.stem_channels = 16;
      // Three blocks, every feature map at most 32 channels wide.
      c.blocks = {{8, 8, 8, 8, 8, 8, true}, {8, 8, 8, 8, 8, 8, false}, {8, 8, 8, 8, 8, 8, false}};
      c.embedding_dim = 32;
      break;
    case ScalePreset::Small:
      c.input_height = c.input_width = 128;
      c.stem_channels = 32;
      c.blocks = {{16, 16, 24, 16, 24, 16, true},
                  {24, 24, 32, 24, 32, 24, false},
                  {32, 32, 48, 32, 48, 32, true},
                  {48, 32, 64, 32, 64, 48, false}};
      c.embedding_dim = 128;
      break;
    case ScalePreset::Paper:
      // Mixed_5b .. Mixed_7c widths of the canonical network.
      c.input_height = c.input_width = 299;
      c.stem_channels = 64;
      c.blocks = {{64, 48, 64, 64, 96, 32, false},      {64, 48, 64, 64, 96, 64, false},
                  {64, 48, 64, 64, 96, 64, true},       {192, 128, 192, 128, 192, 192, false},
                  {192, 160, 192, 160, 192, 192, false}, {192, 160, 192, 160, 192, 192, false},
                  {192, 192, 192, 192, 192, 192, true},  {320, 384, 768, 448, 768, 192, false},
                  {320, 384, 768, 448, 768, 192, false}};
      c.embedding_dim = 2048;
      break;
  }
  return c;
}

void ModelConfig::validate() const {
  check(input_height >= 32 && input_width >= 32, ErrorCode::ConfigError, "input_size must be >= (32, 32)");
  check(stem_channels >= 1 && embedding_dim >= 1, ErrorCode::ConfigError, "channel widths must be >= 1");
  check(!blocks.empty(), ErrorCode::ConfigError, "at least one inception block is required");
  for (const auto& b : blocks) {
    check(b.branch1x1 >= 1 && b.factorized_reduce >= 1 && b.factorized_out >= 1 && b.double_reduce >= 1 &&
              b.double_out >= 1 && b.pool_proj >= 1,
          ErrorCode::ConfigError, "inception branch widths must be >= 1");
  }
  check(bn_momentum >= 0.0 && bn_momentum < 1.0 && bn_epsilon > 0.0, ErrorCode::ConfigError,
        "invalid batch-norm settings");
}

std::string config_to_json(const ModelConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.blocks) {
    blocks.push_back({{"branch1x1", b.branch1x1},
                      {"factorized_reduce", b.factorized_reduce},
                      {"factorized_out", b.factorized_out},
                      {"double_reduce", b.double_reduce},
                      {"double_out", b.double_out},
                      {"pool_proj", b.pool_proj},
                      {"downsample_after", b.downsample_after}});
  }
  json j{{"input_height", c.input_height},
         {"input_width", c.input_width},
         {"stem_channels", c.stem_channels},
         {"blocks", blocks},
         {"embedding_dim", c.embedding_dim},
         {"scale_preset", to_string(c.scale_preset)},
         {"fakeness_from_alteration", c.fakeness_from_alteration},
         {"bn_momentum", c.bn_momentum},
         {"bn_epsilon", c.bn_epsilon}};
  return j.dump();
}

ModelConfig config_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    ModelConfig c;
    c.input_height = j.at("input_height").get<int>();
    c.input_width = j.at("input_width").get<int>();
    c.stem_channels = j.at("stem_channels").get<int>();
    c.embedding_dim = j.at("embedding_dim").get<int>();
    const auto preset = parse_preset(j.at("scale_preset").get<std::string>());
    check(preset.has_value(), ErrorCode::ConfigError, "unknown scale preset");
    c.scale_preset = *preset;
    c.fakeness_from_alteration = j.value("fakeness_from_alteration", false);
    c.bn_momentum = j.value("bn_momentum", 0.99);
    c.bn_epsilon = j.value("bn_epsilon", 1e-3);
    for (const auto& b : j.at("blocks")) {
      c.blocks.push_back({b.at("branch1x1").get<int>(), b.at("factorized_reduce").get<int>(),
                          b.at("factorized_out").get<int>(), b.at("double_reduce").get<int>(),
                          b.at("double_out").get<int>(), b.at("pool_proj").get<int>(),
                          b.at("downsample_after").get<bool>()});
    }
    c.validate();
    return c;
  } catch (const json::exception& ex) {
    fail(ErrorCode::ConfigError, std::string("model config JSON: ") + ex.what());
  }
}

bool Model::has_head(Task t) const {
  if (t == Task::Fakeness && config.fakeness_from_alteration) return heads.contains(Task::Alteration);
  return heads.contains(t);
}

Parameter* Model::find(std::string_view name) {
  for (auto& p : backbone) {
    if (p.name == name) return &p;
  }
  for (auto& [task, head] : heads) {
    if (head.weight.name == name) return &head.weight;
    if (head.bias.name == name) return &head.bias;
  }
  return nullptr;
}

const Parameter* Model::find(std::string_view name) const { return const_cast<Model*>(this)->find(name); }

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : backbone) {
    if (p.trainable) n += p.values.size();
  }
  for (const auto& [task, head] : heads) n += head.weight.values.size() + head.bias.values.size();
  return n;
}

std::vector<std::string> Model::layer_names() const {
  std::vector<std::string> names;
  for (const auto& s : engine::backbone_layout(config)) names.push_back(s.name);
  return names;
}

Tensor preprocess(const GrayImage& img, int target_height, int target_width) {
  check(target_height >= 32 && target_width >= 32, ErrorCode::InvalidArgument, "preprocess target must be >= (32, 32)");
  Tensor out({1, target_height, target_width});
  const double sy = static_cast<double>(img.height()) / target_height;
  const double sx = static_cast<double>(img.width()) / target_width;
  for (int y = 0; y < target_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double ay = fy - y0;
    for (int x = 0; x < target_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double ax = fx - x0;
      const double v = (1 - ay) * ((1 - ax) * img.at(x0, y0) + ax * img.at(x1, y0)) +
                       ay * ((1 - ax) * img.at(x0, y1) + ax * img.at(x1, y1));
      out.values[static_cast<std::size_t>(y) * target_width + x] = v / 255.0;
    }
  }
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& samples) {
  check(!samples.empty(), ErrorCode::ShapeMismatch, "empty batch");
  const auto& s0 = samples.front().shape;
  check(s0.size() == 3 && s0[0] == 1, ErrorCode::ShapeMismatch, "samples must be (1, h, w)");
  Tensor out({static_cast<int>(samples.size()), 1, s0[1], s0[2]});
  auto it = out.values.begin();
  for (const auto& s : samples) {
    check(s.shape == s0, ErrorCode::ShapeMismatch, "samples differ in shape");
    it = std::copy(s.values.begin(), s.values.end(), it);
  }
  return out;
}

namespace {

void he_uniform(Parameter& p, int fan_in, std::uint64_t seed) {
  Rng rng(derive_seed(seed, fnv1a64(p.name)));
  const double limit = std::sqrt(6.0 / std::max(fan_in, 1));
  for (auto& v : p.values) v = rng.uniform(-limit, limit);
}

Parameter make_param(std::string name, std::vector<int> shape, double fill, bool trainable) {
  Parameter p{std::move(name), std::move(shape), {}, trainable};
  p.values.assign(shape_size(p.shape), fill);
  return p;
}

double to_precision(double v, Precision p) { return p == Precision::Float32 ? static_cast<double>(static_cast<float>(v)) : v; }

template <class T>
T log_sum_exp(const T* row, int n) {
  const T m = *std::max_element(row, row + n);
  T s = 0;
  for (int k = 0; k < n; ++k) s += std::exp(row[k] - m);
  return m + std::log(s);
}

template <class T>
Tensor forward_impl(const Model& model, const Tensor& batch, Task task) {
  check(model.has_head(task), ErrorCode::MissingHead, "model has no " + std::string(to_string(task)) + " head");
  engine::Executor<T> exec(model, false, false);
  exec.forward(batch);
  const auto z = exec.logits(task);
  return Tensor({exec.batch(), num_classes(task)}, std::vector<double>(z.begin(), z.end()));
}

template <class T>
LossAndGrads loss_impl(const Model& model, const Tensor& batch, std::span<const int> labels, Task task) {
  check(model.has_head(task), ErrorCode::MissingHead, "model has no " + std::string(to_string(task)) + " head");
  const bool train_backbone = !model.frozen_backbone;
  engine::Executor<T> exec(model, train_backbone, train_backbone);
  exec.forward(batch);
  const int b = exec.batch();
  check(static_cast<int>(labels.size()) == b, ErrorCode::ShapeMismatch, "label count differs from batch size");
  const int c = num_classes(task);
  for (int y : labels) check(y >= 0 && y < c, ErrorCode::ShapeMismatch, "label out of range");

  const auto z = exec.logits(task);
  std::vector<T> dz(z.size());
  T loss = 0;
  for (int i = 0; i < b; ++i) {
    const T* row = z.data() + static_cast<std::size_t>(i) * c;
    const T lse = log_sum_exp(row, c);
    loss += lse - row[labels[i]];
    for (int k = 0; k < c; ++k) {
      const T p = std::exp(row[k] - lse);
      dz[static_cast<std::size_t>(i) * c + k] = (p - (k == labels[i] ? T(1) : T(0))) / static_cast<T>(b);
    }
  }
  exec.backward(task, dz);

  LossAndGrads out;
  out.loss = static_cast<double>(loss / static_cast<T>(b));
  out.logits = Tensor({b, c}, std::vector<double>(z.begin(), z.end()));
  out.grads = exec.gradients();
  out.batch_stats = exec.batch_stats();
  return out;
}

template <class T>
LossPattern pattern_impl(const Model& model, const Tensor& batch, std::span<const int> labels, Task task) {
  check(model.has_head(task), ErrorCode::MissingHead, "model has no " + std::string(to_string(task)) + " head");
  engine::Executor<T> exec(model, !model.frozen_backbone, false);
  exec.track_pattern(true);
  exec.forward(batch);
  const int b = exec.batch();
  check(static_cast<int>(labels.size()) == b, ErrorCode::ShapeMismatch, "label count differs from batch size");
  const int c = num_classes(task);
  const auto z = exec.logits(task);
  T loss = 0;
  for (int i = 0; i < b; ++i) {
    check(labels[i] >= 0 && labels[i] < c, ErrorCode::ShapeMismatch, "label out of range");
    const T* row = z.data() + static_cast<std::size_t>(i) * c;
    loss += log_sum_exp(row, c) - row[labels[i]];
  }
  return {static_cast<double>(loss / static_cast<T>(b)), exec.activation_pattern()};
}

template <class T>
LayerProbe probe_impl(const Model& model, const Tensor& sample, Task task, int class_index, std::string_view layer) {
  check(model.has_head(task), ErrorCode::MissingHead, "model has no " + std::string(to_string(task)) + " head");
  check(sample.shape.size() == 4 && sample.shape[0] == 1, ErrorCode::ShapeMismatch, "probe expects one sample");
  const int c = num_classes(task);
  check(class_index >= 0 && class_index < c, ErrorCode::ShapeMismatch, "class index out of range");
  engine::Executor<T> exec(model, false, false);
  exec.forward(sample);
  const auto z = exec.logits(task);
  std::vector<T> dz(static_cast<std::size_t>(c), T(0));
  dz[static_cast<std::size_t>(class_index)] = T(1);
  exec.backward(task, dz, layer);

  const auto& act = exec.stage_output(layer);
  const auto& grad = exec.captured_gradient();
  LayerProbe probe;
  probe.layer = std::string(layer);
  probe.channels = act.c;
  probe.height = act.h;
  probe.width = act.w;
  probe.activations.assign(act.v.begin(), act.v.end());
  probe.gradients.assign(grad.v.begin(), grad.v.end());
  probe.logits.assign(z.begin(), z.end());
  return probe;
}

}  // namespace

Model build_model(const ModelConfig& config, const std::set<Task>& tasks, std::uint64_t seed) {
  config.validate();
  Model model;
  model.config = config;
  for (const auto& stage : engine::backbone_layout(config)) {
    for (const auto& u : stage.units) {
      const auto& g = u.geom;
      auto w = make_param(u.name + ".weight", {g.cout, g.cin, g.kh, g.kw}, 0.0, true);
      he_uniform(w, g.cin * g.kh * g.kw, seed);
      model.backbone.push_back(std::move(w));
      model.backbone.push_back(make_param(u.name + ".bn.gamma", {g.cout}, 1.0, true));
      model.backbone.push_back(make_param(u.name + ".bn.beta", {g.cout}, 0.0, true));
      model.backbone.push_back(make_param(u.name + ".bn.running_mean", {g.cout}, 0.0, false));
      model.backbone.push_back(make_param(u.name + ".bn.running_var", {g.cout}, 1.0, false));
    }
  }
  // The spatial extent must survive the stem and every downsampling stage.
  int h = config.input_height;
  int w = config.input_width;
  for (int i = 0; i < 2; ++i) {
    h = (h - 1) / 2 + 1;
    w = (w - 1) / 2 + 1;
  }
  for (const auto& b : config.blocks) {
    if (b.downsample_after) {
      h = (h - 1) / 2 + 1;
      w = (w - 1) / 2 + 1;
    }
  }
  check(h >= 1 && w >= 1, ErrorCode::ConfigError, "input too small for the configured downsampling");
  for (Task t : tasks) attach_head(model, t, seed);
  round_to_precision(model);
  return model;
}

void attach_head(Model& model, Task task, std::uint64_t seed) {
  if (task == Task::Fakeness && model.config.fakeness_from_alteration) task = Task::Alteration;
  const std::string prefix = "head." + std::string(to_string(task));
  TaskHead head;
  head.task = task;
  head.weight = make_param(prefix + ".weight", {model.config.embedding_dim, num_classes(task)}, 0.0, true);
  he_uniform(head.weight, model.config.embedding_dim, seed);
  head.bias = make_param(prefix + ".bias", {num_classes(task)}, 0.0, true);
  for (auto& v : head.weight.values) v = to_precision(v, model.precision);
  model.heads[task] = std::move(head);
}

Tensor forward(const Model& model, const Tensor& batch, Task task) {
  return model.precision == Precision::Float64 ? forward_impl<double>(model, batch, task)
                                               : forward_impl<float>(model, batch, task);
}

Tensor softmax_rows(const Tensor& logits) {
  check(logits.shape.size() == 2, ErrorCode::ShapeMismatch, "softmax expects (B, C)");
  Tensor out = logits;
  const int c = logits.shape[1];
  for (int i = 0; i < logits.shape[0]; ++i) {
    double* row = out.values.data() + static_cast<std::size_t>(i) * c;
    const double lse = log_sum_exp(row, c);
    for (int k = 0; k < c; ++k) row[k] = std::exp(row[k] - lse);
  }
  return out;
}

LossAndGrads loss_and_grads(const Model& model, const Tensor& batch, std::span<const int> labels, Task task) {
  return model.precision == Precision::Float64 ? loss_impl<double>(model, batch, labels, task)
                                               : loss_impl<float>(model, batch, labels, task);
}

LossPattern loss_with_pattern(const Model& model, const Tensor& batch, std::span<const int> labels, Task task) {
  return model.precision == Precision::Float64 ? pattern_impl<double>(model, batch, labels, task)
                                               : pattern_impl<float>(model, batch, labels, task);
}

std::map<std::string, BatchNormStats> forward_batch_stats(const Model& model, const Tensor& batch) {
  if (model.precision == Precision::Float64) {
    engine::Executor<double> exec(model, true, false);
    exec.forward(batch);
    return exec.batch_stats();
  }
  engine::Executor<float> exec(model, true, false);
  exec.forward(batch);
  return exec.batch_stats();
}

void update_running_stats(Model& model, const std::map<std::string, BatchNormStats>& stats) {
  const double m = model.config.bn_momentum;
  for (const auto& [mean_name, s] : stats) {
    const std::string prefix = mean_name.substr(0, mean_name.size() - std::string("running_mean").size());
    auto* mean = model.find(mean_name);
    auto* var = model.find(prefix + "running_var");
    check(mean && var && mean->values.size() == s.mean.size(), ErrorCode::ShapeMismatch,
          "batch statistics do not match " + mean_name);
    for (std::size_t i = 0; i < s.mean.size(); ++i) {
      mean->values[i] = to_precision(m * mean->values[i] + (1 - m) * s.mean[i], model.precision);
      var->values[i] = to_precision(m * var->values[i] + (1 - m) * s.variance[i], model.precision);
    }
  }
}

LayerProbe probe_layer(const Model& model, const Tensor& sample, Task task, int class_index, std::string_view layer) {
  return model.precision == Precision::Float64 ? probe_impl<double>(model, sample, task, class_index, layer)
                                               : probe_impl<float>(model, sample, task, class_index, layer);
}

void round_to_precision(Model& model) {
  if (model.precision == Precision::Float64) return;
  for (auto& p : model.backbone) {
    for (auto& v : p.values) v = to_precision(v, model.precision);
  }
  for (auto& [task, head] : model.heads) {
    for (auto& v : head.weight.values) v = to_precision(v, model.precision);
    for (auto& v : head.bias.values) v = to_precision(v, model.precision);
  }
}

std::uint64_t backbone_checksum(const Model& model) {
  Fnv1a64 h;
  for (const auto& p : model.backbone) {
    h.update(p.name);
    for (double v : p.values) h.update_value(v);
  }
  return h.digest();
}

std::uint64_t head_checksum(const Model& model, Task task) {
  const auto it = model.heads.find(task);
  check(it != model.heads.end(), ErrorCode::MissingHead, "model has no " + std::string(to_string(task)) + " head");
  Fnv1a64 h;
  for (double v : it->second.weight.values) h.update_value(v);
  for (double v : it->second.bias.values) h.update_value(v);
  return h.digest();
}

}  // namespace fpx
