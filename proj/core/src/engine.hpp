#pragma once

// Internal CNN execution engine. Activations use a channel-major layout
// [channel][batch][row][col], so a convolution is one GEMM over the whole
// batch, batch norm works on contiguous rows, and channel concatenation is a
// row-block copy.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fpx/network.hpp"

namespace fpx::engine {

template <class T>
struct Act {
  int c = 0;
  int b = 0;
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Act() = default;
  Act(int c_, int b_, int h_, int w_) : c(c_), b(b_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * b_ * h_ * w_) {}
  std::size_t plane() const noexcept { return static_cast<std::size_t>(b) * h * w; }
};

template <class T>
using ActPtr = std::shared_ptr<const Act<T>>;

struct ConvGeom {
  int cin = 1;
  int cout = 1;
  int kh = 1;
  int kw = 1;
  int stride = 1;
  int ph = 0;
  int pw = 0;

  int out_h(int h) const noexcept { return (h + 2 * ph - kh) / stride + 1; }
  int out_w(int w) const noexcept { return (w + 2 * pw - kw) / stride + 1; }
  bool pointwise() const noexcept { return kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0; }
};

// Backbone layout shared by parameter creation and execution.
struct UnitSpec {
  std::string name;
  ConvGeom geom;
};

struct StageSpec {
  enum class Kind { Conv, Inception, MaxPool } kind = Kind::Conv;
  std::string name;
  std::vector<UnitSpec> units;  // Conv: 1; Inception: b1, b2a, b2b, b2c, b3a, b3b, b3c, b4
};

std::vector<StageSpec> backbone_layout(const ModelConfig& config);

template <class T>
struct Context;

template <class T>
class Stage;

// Runs one model in one arithmetic precision. Holds per-call caches only.
template <class T>
class Executor {
 public:
  Executor(const Model& model, bool batch_statistics, bool param_grads);
  ~Executor();
  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  // batch: (B, 1, H, W). Returns the embedding, B x E row-major.
  const std::vector<T>& forward(const Tensor& batch);
  // B x n_classes, for a head attached to the model (Fakeness may be collapsed).
  std::vector<T> logits(Task task);
  // Backprop of d(logits); accumulates head grads and, when enabled, backbone grads.
  // Records the gradient arriving at `capture` (a stage name) if given.
  void backward(Task task, const std::vector<T>& d_logits, std::string_view capture = {});

  // Hash of all ReLU and max-pool decisions in the next forward passes.
  void track_pattern(bool on);
  std::uint64_t activation_pattern() const;

  NamedTensors gradients() const;
  std::map<std::string, BatchNormStats> batch_stats() const;
  // Output of a named stage from the last forward, and its captured gradient.
  const Act<T>& stage_output(std::string_view name) const;
  const Act<T>& captured_gradient() const { return captured_; }
  int batch() const noexcept { return batch_; }

 private:
  const Model& model_;
  std::unique_ptr<Context<T>> ctx_;
  std::vector<std::unique_ptr<Stage<T>>> stages_;
  std::vector<ActPtr<T>> outputs_;
  std::vector<T> embedding_;
  int batch_ = 0;
  std::map<Task, std::vector<T>> head_w_grad_;
  std::map<Task, std::vector<T>> head_b_grad_;
  Act<T> captured_;
};

}  // namespace fpx::engine
