#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpx/image.hpp"
#include "fpx/labels.hpp"

namespace fpx {

// Row-major dense tensor. Values are held in double; the model's Precision
// decides the arithmetic used to produce them.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  Tensor(std::vector<int> s, std::vector<double> v);

  std::size_t size() const noexcept { return values.size(); }
  int dim(std::size_t i) const { return shape.at(i); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t shape_size(const std::vector<int>& shape);

enum class Task : std::uint8_t { Fakeness, Alteration, Gender, Hand, Finger };
inline constexpr Task kAllTasks[] = {Task::Fakeness, Task::Alteration, Task::Gender, Task::Hand, Task::Finger};

std::string_view to_string(Task t) noexcept;
std::optional<Task> parse_task(std::string_view s);
int num_classes(Task t) noexcept;
// Fakeness: {Altered, Real}; Alteration: {Obl, Cr, Z-cut, Real}.
std::vector<std::string> class_names(Task t);
int task_label(Task t, const RecordLabel& label) noexcept;

enum class ScalePreset { Toy, Small, Paper };
enum class Precision { Float32, Float64 };

std::string_view to_string(ScalePreset p) noexcept;
std::optional<ScalePreset> parse_preset(std::string_view s);

// One factorized inception block: four parallel branches concatenated along channels.
struct BlockConfig {
  int branch1x1 = 8;
  int factorized_reduce = 8;  // 1x1 -> 1x3 -> 3x1
  int factorized_out = 8;
  int double_reduce = 8;  // 1x1 -> 3x3 -> 3x3
  int double_out = 8;
  int pool_proj = 8;          // 3x3 average pool -> 1x1
  bool downsample_after = false;  // 3x3 stride-2 max pool after the block

  int out_channels() const noexcept { return branch1x1 + factorized_out + double_out + pool_proj; }
  friend bool operator==(const BlockConfig&, const BlockConfig&) = default;
};

struct ModelConfig {
  int input_height = 128;
  int input_width = 128;
  int stem_channels = 16;
  std::vector<BlockConfig> blocks;
  int embedding_dim = 64;
  ScalePreset scale_preset = ScalePreset::Toy;
  // Serve Fakeness by collapsing the Alteration head (Real vs. the rest)
  // instead of a dedicated binary head.
  bool fakeness_from_alteration = false;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;

  static ModelConfig preset(ScalePreset p);
  void validate() const;  // throws ConfigError
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string config_to_json(const ModelConfig& c);
ModelConfig config_from_json(std::string_view json);

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
  bool trainable = true;  // false for batch-norm running statistics

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

struct TaskHead {
  Task task = Task::Alteration;
  Parameter weight;  // embedding_dim x n_classes
  Parameter bias;    // n_classes

  friend bool operator==(const TaskHead&, const TaskHead&) = default;
};

struct Model {
  ModelConfig config;
  std::vector<Parameter> backbone;  // architecture order
  std::map<Task, TaskHead> heads;
  bool frozen_backbone = false;
  Precision precision = Precision::Float32;

  bool has_head(Task t) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  std::size_t parameter_count() const;  // trainable backbone + heads
  // Names of the feature maps that can feed an activation map, input to output.
  std::vector<std::string> layer_names() const;
};

using NamedTensors = std::map<std::string, Tensor>;

/// Scales intensities to [0, 1] and bilinearly resizes (half-pixel centers) to
/// target; output shape (1, h, w).
Tensor preprocess(const GrayImage& img, int target_height, int target_width);
// Stacks (1, h, w) tensors into (B, 1, h, w).
Tensor stack_batch(const std::vector<Tensor>& samples);

/// Stem of two stride-2 3x3 conv units, the configured inception blocks, a 1x1
/// embedding conv unit and global average pooling; every conv unit is
/// conv -> batch norm -> ReLU. He-uniform weights, one softmax head per task.
Model build_model(const ModelConfig& config, const std::set<Task>& tasks, std::uint64_t seed);

/// Adds or replaces the head for `task`; the backbone is untouched.
void attach_head(Model& model, Task task, std::uint64_t seed);

/// Inference-mode logits (B, n_classes); batch-norm uses running statistics.
Tensor forward(const Model& model, const Tensor& batch, Task task);
Tensor softmax_rows(const Tensor& logits);

struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> variance;  // unbiased
};

struct LossAndGrads {
  double loss = 0.0;
  Tensor logits;
  NamedTensors grads;
  // Batch statistics per batch-norm layer (running-mean parameter name); empty when frozen.
  std::map<std::string, BatchNormStats> batch_stats;
};

/// Mean categorical cross-entropy. Batch norm runs on batch statistics unless the
/// backbone is frozen; grads cover every trainable parameter (heads only when frozen).
LossAndGrads loss_and_grads(const Model& model, const Tensor& batch, std::span<const int> labels, Task task);

// Forward-only loss plus a hash of every ReLU on/off decision and max-pool
// winner. Two evaluations with equal hashes lie on the same linear piece.
struct LossPattern {
  double loss = 0.0;
  std::uint64_t activation_pattern = 0;
};
LossPattern loss_with_pattern(const Model& model, const Tensor& batch, std::span<const int> labels, Task task);

// Forward pass on batch statistics only; per-layer batch mean and unbiased variance.
std::map<std::string, BatchNormStats> forward_batch_stats(const Model& model, const Tensor& batch);

/// running <- momentum * running + (1 - momentum) * batch, for every reported layer.
void update_running_stats(Model& model, const std::map<std::string, BatchNormStats>& stats);

// Feature maps of one layer and the gradient of one class score with respect to them.
struct LayerProbe {
  std::string layer;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> activations;  // channels x height x width
  std::vector<double> gradients;
  std::vector<double> logits;
};

/// Inference-mode forward of a single (1, 1, h, w) sample, then backprop of the
/// `class_index` logit down to `layer`.
LayerProbe probe_layer(const Model& model, const Tensor& sample, Task task, int class_index, std::string_view layer);

// Rounds every parameter to the model's precision (float32 storage in Float32 mode).
void round_to_precision(Model& model);

std::uint64_t backbone_checksum(const Model& model);
std::uint64_t head_checksum(const Model& model, Task task);

inline constexpr char kCheckpointMagic[4] = {'R', 'F', 'G', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// "RFG1", u16 version, u32-length JSON block (config, heads, frozen flag), u32
/// tensor count, then per tensor: u32 name length, name, u32 rank, u32 dims,
/// little-endian float32 values. A trailing FNV-1a 64 digest covers all bytes.
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace fpx
