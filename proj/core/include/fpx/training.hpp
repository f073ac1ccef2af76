#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpx/dataset.hpp"
#include "fpx/network.hpp"

namespace fpx {

enum class Balance { None, Undersample };
enum class TrainMode { FromScratch, FinetuneHead };
enum class DatasetFilter { All, RealOnly };

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 25;
  int steps_per_epoch = 1000;
  int batch_size = 32;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-7;
  Balance balance = Balance::None;
  TrainMode mode = TrainMode::FromScratch;
  DatasetFilter filter = DatasetFilter::All;
  std::uint64_t seed = 0;
  // After each epoch, replace the momentum running statistics with population
  // statistics from this many training batches under the current weights.
  // 0 keeps the momentum estimates.
  int bn_recalibration_batches = 16;

  void validate() const;  // throws InvalidArgument
};

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
  Task task = Task::Alteration;
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  int available_batches = 0;  // per epoch, before the steps_per_epoch cap
  bool steps_capped = false;  // steps_per_epoch exceeded the available batches
  int best_epoch = 0;
  double best_validation_accuracy = 0.0;
  double wall_seconds = 0.0;  // not serialized, so reports stay reproducible
  std::string checkpoint_path;

  std::string to_json() const;
};

// v <- rho v + (1 - rho) g^2 ; theta <- theta - lr g / (sqrt(v) + eps), elementwise.
void rmsprop_step(std::span<double> params, std::span<const double> grads, std::span<double> v,
                  double learning_rate, double rho, double epsilon);

class RmsProp {
 public:
  explicit RmsProp(const TrainConfig& cfg) : lr_(cfg.learning_rate), rho_(cfg.rmsprop_decay), eps_(cfg.rmsprop_epsilon) {}

  // Updates every parameter named in grads; state is created on first sight.
  void step(Model& model, const NamedTensors& grads);
  const std::map<std::string, std::vector<double>>& state() const noexcept { return v_; }

 private:
  double lr_, rho_, eps_;
  std::map<std::string, std::vector<double>> v_;
};

/// Class-balanced batches over positions of `labels`. Each class is shuffled and
/// truncated to the smallest class count; every batch holds batch_size / n_classes
/// positions per class and no position repeats.
std::vector<std::vector<std::size_t>> undersample_epoch(std::span<const int> labels, int n_classes, int batch_size,
                                                        std::uint64_t seed);

// Preprocessed inputs and per-task labels for the manifest, loaded once.
class SampleCache {
 public:
  SampleCache(const Manifest& manifest, int height, int width);

  Tensor batch(std::span<const std::size_t> indices) const;
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return samples_.size(); }
  const RecordLabel& label(std::size_t i) const { return labels_.at(i); }

 private:
  int height_;
  int width_;
  std::vector<std::vector<float>> samples_;
  std::vector<RecordLabel> labels_;
};

struct TrainOptions {
  std::ostream* progress = nullptr;  // one line per epoch
  std::string checkpoint_path;        // best-validation checkpoint, when set
  // Called with (epoch, manifest indices) before each optimizer step.
  std::function<void(int, std::span<const std::size_t>)> on_batch;
};

/// FromScratch updates every parameter; FinetuneHead freezes the backbone and
/// updates only the task head (attached on demand). Returns the weights of the
/// best validation epoch.
TrainReport train(Model& model, const Manifest& manifest, const SplitAssignment& split, Task task,
                  const TrainConfig& cfg, const TrainOptions& options = {});
TrainReport train(Model& model, const SampleCache& cache, const SplitAssignment& split, Task task,
                  const TrainConfig& cfg, const TrainOptions& options = {});

// Sets every batch-norm running mean/variance to the population estimate over
// the batches: mean of batch means, and mean of unbiased batch variances plus
// the spread of the batch means.
void recalibrate_batch_norm(Model& model, const SampleCache& cache, std::span<const std::vector<std::size_t>> batches);

// Accuracy in inference mode over the given indices.
double accuracy_on(const Model& model, const SampleCache& cache, std::span<const std::size_t> indices, Task task,
                   int batch_size = 32);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t within_tolerance = 0;  // relative error <= 1e-3
  std::string worst_parameter;
  std::size_t worst_index = 0;
  // Candidates whose +/- step evaluations changed a ReLU or max-pool decision.
  std::size_t kinks_skipped = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  bool float64 = true;
  std::size_t max_coordinates = 1000;
  std::uint64_t seed = 0;
  // Drop candidates where the finite difference straddles a kink and draw
  // another; the function is not differentiable across that interval.
  bool skip_kinks = true;
  // Applied to the analytic gradients before comparison (harness sensitivity checks).
  std::function<void(NamedTensors&)> tamper;
};

/// Central differences on a seeded sample of trainable coordinates (at least one
/// per tensor). Relative error is |a - n| / max(|a|, |n|, 1e-8). Gives up after
/// 20x the requested count of candidates, so `coordinates` may fall short.
GradCheckResult grad_check(const Model& model, const Tensor& batch, std::span<const int> labels, Task task,
                           const GradCheckOptions& options = {});

}  // namespace fpx
