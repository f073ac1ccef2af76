#include "fpx/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "fpx/error.hpp"
#include "fpx/rng.hpp"

namespace fpx {

void TrainConfig::validate() const {
  check(learning_rate > 0.0, ErrorCode::InvalidArgument, "learning_rate must be > 0");
  check(epochs >= 1, ErrorCode::InvalidArgument, "epochs must be >= 1");
  check(steps_per_epoch >= 1, ErrorCode::InvalidArgument, "steps_per_epoch must be >= 1");
  check(batch_size >= 2, ErrorCode::InvalidArgument, "batch_size must be >= 2");
  check(balance != Balance::Undersample || batch_size % 2 == 0, ErrorCode::InvalidArgument,
        "batch_size must be even when undersampling");
  check(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0 && rmsprop_epsilon >= 0.0, ErrorCode::InvalidArgument,
        "invalid RMSprop settings");
  check(bn_recalibration_batches >= 0, ErrorCode::InvalidArgument, "bn_recalibration_batches must be >= 0");
}

std::string TrainReport::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"steps", e.steps},
                           {"train_loss", e.train_loss},
                           {"train_accuracy", e.train_accuracy},
                           {"val_accuracy", e.validation_accuracy}});
  }
  nlohmann::json j{
      {"task", to_string(task)},
      {"epochs", epochs_json},
      {"available_batches", available_batches},
      {"steps_capped", steps_capped},
      {"best_epoch", best_epoch},
      {"best_val_accuracy", best_validation_accuracy},
      {"checkpoint", checkpoint_path},
      {"config",
       {{"learning_rate", config.learning_rate},
        {"epochs", config.epochs},
        {"steps_per_epoch", config.steps_per_epoch},
        {"batch_size", config.batch_size},
        {"rmsprop_decay", config.rmsprop_decay},
        {"rmsprop_epsilon", config.rmsprop_epsilon},
        {"bn_recalibration_batches", config.bn_recalibration_batches},
        {"balance", config.balance == Balance::Undersample ? "undersample" : "none"},
        {"mode", config.mode == TrainMode::FinetuneHead ? "finetune_head" : "from_scratch"},
        {"filter", config.filter == DatasetFilter::RealOnly ? "real_only" : "all"},
        {"seed", config.seed}}}};
  return j.dump(2) + "\n";
}

void rmsprop_step(std::span<double> params, std::span<const double> grads, std::span<double> v, double learning_rate,
                  double rho, double epsilon) {
  check(params.size() == grads.size() && params.size() == v.size(), ErrorCode::ShapeMismatch,
        "RMSprop parameter, gradient and state sizes differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    v[i] = rho * v[i] + (1.0 - rho) * g * g;
    params[i] -= learning_rate * g / (std::sqrt(v[i]) + epsilon);
  }
}

void RmsProp::step(Model& model, const NamedTensors& grads) {
  for (const auto& [name, g] : grads) {
    Parameter* p = model.find(name);
    check(p != nullptr, ErrorCode::ShapeMismatch, "gradient for unknown parameter " + name);
    check(p->trainable, ErrorCode::ShapeMismatch, "gradient for non-trainable parameter " + name);
    auto& v = v_[name];
    if (v.empty()) v.assign(p->values.size(), 0.0);
    rmsprop_step(p->values, g.values, v, lr_, rho_, eps_);
  }
  round_to_precision(model);
}

std::vector<std::vector<std::size_t>> undersample_epoch(std::span<const int> labels, int n_classes, int batch_size,
                                                        std::uint64_t seed) {
  check(n_classes >= 2, ErrorCode::InvalidArgument, "undersampling needs at least two classes");
  check(batch_size >= n_classes && batch_size % n_classes == 0, ErrorCode::InvalidArgument,
        "batch_size must be a multiple of the class count");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check(labels[i] >= 0 && labels[i] < n_classes, ErrorCode::UnknownLabel, "label out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::size_t min_count = labels.size();
  for (int c = 0; c < n_classes; ++c) {
    check(!by_class[c].empty(), ErrorCode::DegenerateClass, "class " + std::to_string(c) + " has no samples");
    min_count = std::min(min_count, by_class[c].size());
  }
  Rng rng(seed);
  for (auto& members : by_class) {
    rng.shuffle(members);
    members.resize(min_count);
  }
  const std::size_t per_class = static_cast<std::size_t>(batch_size / n_classes);
  const std::size_t n_batches = min_count / per_class;
  std::vector<std::vector<std::size_t>> batches(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    for (const auto& members : by_class) {
      batches[b].insert(batches[b].end(), members.begin() + static_cast<std::ptrdiff_t>(b * per_class),
                        members.begin() + static_cast<std::ptrdiff_t>((b + 1) * per_class));
    }
    rng.shuffle(batches[b]);
  }
  return batches;
}

SampleCache::SampleCache(const Manifest& manifest, int height, int width) : height_(height), width_(width) {
  samples_.reserve(manifest.entries.size());
  labels_.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const auto t = preprocess(load_image(manifest.resolve(e)), height, width);
    samples_.emplace_back(t.values.begin(), t.values.end());
    labels_.push_back(e.label);
  }
}

Tensor SampleCache::batch(std::span<const std::size_t> indices) const {
  Tensor out({static_cast<int>(indices.size()), 1, height_, width_});
  auto it = out.values.begin();
  for (auto i : indices) it = std::copy(samples_.at(i).begin(), samples_.at(i).end(), it);
  return out;
}

double accuracy_on(const Model& model, const SampleCache& cache, std::span<const std::size_t> indices, Task task,
                   int batch_size) {
  check(!indices.empty(), ErrorCode::EmptySplit, "no samples to score");
  std::size_t correct = 0;
  const int c = num_classes(task);
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto chunk = indices.subspan(start, std::min<std::size_t>(batch_size, indices.size() - start));
    const auto logits = forward(model, cache.batch(chunk), task);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto* row = logits.values.data() + i * c;
      const int pred = static_cast<int>(std::max_element(row, row + c) - row);
      correct += pred == task_label(task, cache.label(chunk[i]));
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

void recalibrate_batch_norm(Model& model, const SampleCache& cache, std::span<const std::vector<std::size_t>> batches) {
  if (batches.empty()) return;
  std::map<std::string, std::vector<BatchNormStats>> per_layer;
  for (const auto& idx : batches) {
    for (auto& [name, st] : forward_batch_stats(model, cache.batch(idx))) per_layer[name].push_back(std::move(st));
  }
  for (const auto& [mean_name, list] : per_layer) {
    const std::string prefix = mean_name.substr(0, mean_name.size() - std::string("running_mean").size());
    auto* mean = model.find(mean_name);
    auto* var = model.find(prefix + "running_var");
    check(mean && var, ErrorCode::ShapeMismatch, "batch statistics do not match " + mean_name);
    const auto k = static_cast<double>(list.size());
    for (std::size_t c = 0; c < mean->values.size(); ++c) {
      double mu = 0.0;
      double within = 0.0;
      for (const auto& st : list) {
        mu += st.mean[c];
        within += st.variance[c];
      }
      mu /= k;
      double between = 0.0;
      for (const auto& st : list) between += (st.mean[c] - mu) * (st.mean[c] - mu);
      mean->values[c] = mu;
      var->values[c] = within / k + between / k;
    }
  }
  round_to_precision(model);
}

TrainReport train(Model& model, const Manifest& manifest, const SplitAssignment& split, Task task,
                  const TrainConfig& cfg, const TrainOptions& options) {
  const SampleCache cache(manifest, model.config.input_height, model.config.input_width);
  return train(model, cache, split, task, cfg, options);
}

TrainReport train(Model& model, const SampleCache& cache, const SplitAssignment& split, Task task,
                  const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  check(cache.height() == model.config.input_height && cache.width() == model.config.input_width,
        ErrorCode::ShapeMismatch, "sample cache resolution differs from the model input");

  auto keep = [&](const std::vector<std::size_t>& part) {
    std::vector<std::size_t> out;
    for (auto i : part) {
      check(i < cache.size(), ErrorCode::ShapeMismatch, "split index beyond the manifest");
      if (cfg.filter == DatasetFilter::All || cache.label(i).alteration == Alteration::Real) out.push_back(i);
    }
    return out;
  };
  const auto train_idx = keep(split.train);
  const auto val_idx = keep(split.validation);
  check(!train_idx.empty(), ErrorCode::EmptySplit, "training split is empty");
  check(!val_idx.empty(), ErrorCode::EmptySplit, "validation split is empty");

  if (cfg.mode == TrainMode::FinetuneHead) {
    model.frozen_backbone = true;
    if (!model.has_head(task)) attach_head(model, task, derive_seed(cfg.seed, 0x4EAD));
  } else {
    model.frozen_backbone = false;
    check(model.has_head(task), ErrorCode::MissingHead, "model has no " + std::string(to_string(task)) + " head");
  }

  std::vector<int> train_labels;
  for (auto i : train_idx) train_labels.push_back(task_label(task, cache.label(i)));

  TrainReport report;
  report.task = task;
  report.config = cfg;
  report.checkpoint_path = options.checkpoint_path;
  RmsProp optimizer(cfg);
  Model best = model;
  report.best_validation_accuracy = -1.0;
  const int n_classes = num_classes(task);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
    std::vector<std::vector<std::size_t>> batches;
    if (cfg.balance == Balance::Undersample) {
      for (auto& b : undersample_epoch(train_labels, n_classes, cfg.batch_size, epoch_seed)) {
        for (auto& pos : b) pos = train_idx[pos];
        batches.push_back(std::move(b));
      }
    } else {
      std::vector<std::size_t> order = train_idx;
      Rng rng(epoch_seed);
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        if (end - start < 2) break;  // batch norm needs two samples
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
      }
    }
    check(!batches.empty(), ErrorCode::EmptySplit, "training split yields no batch");
    report.available_batches = static_cast<int>(batches.size());
    report.steps_capped = report.steps_capped || cfg.steps_per_epoch > report.available_batches;
    const int steps = std::min(cfg.steps_per_epoch, report.available_batches);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t correct = 0;
    for (int s = 0; s < steps; ++s) {
      const auto& idx = batches[static_cast<std::size_t>(s)];
      if (options.on_batch) options.on_batch(epoch, idx);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(task_label(task, cache.label(i)));
      const auto result = loss_and_grads(model, cache.batch(idx), labels, task);
      check(std::isfinite(result.loss), ErrorCode::InvalidArgument, "training diverged (non-finite loss)");
      optimizer.step(model, result.grads);
      if (!model.frozen_backbone) update_running_stats(model, result.batch_stats);
      loss_sum += result.loss * static_cast<double>(idx.size());
      seen += idx.size();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto* row = result.logits.values.data() + i * n_classes;
        correct += static_cast<int>(std::max_element(row, row + n_classes) - row) == labels[i];
      }
    }

    if (!model.frozen_backbone && cfg.bn_recalibration_batches > 0) {
      const auto n = std::min(static_cast<std::size_t>(cfg.bn_recalibration_batches), batches.size());
      recalibrate_batch_norm(model, cache, std::span(batches).first(n));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = steps;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    rec.validation_accuracy = accuracy_on(model, cache, val_idx, task);
    report.epochs.push_back(rec);
    if (rec.validation_accuracy > report.best_validation_accuracy) {
      report.best_validation_accuracy = rec.validation_accuracy;
      report.best_epoch = epoch;
      best = model;
      if (!options.checkpoint_path.empty()) save_model(best, options.checkpoint_path);
    }
    if (options.progress) {
      std::ostringstream line;
      line << "epoch=" << epoch << " loss=" << rec.train_loss << " train_acc=" << rec.train_accuracy
           << " val_acc=" << rec.validation_accuracy << "\n";
      *options.progress << line.str() << std::flush;
    }
  }
  model = std::move(best);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

GradCheckResult grad_check(const Model& base, const Tensor& batch, std::span<const int> labels, Task task,
                           const GradCheckOptions& options) {
  Model model = base;
  model.precision = options.float64 ? Precision::Float64 : Precision::Float32;
  auto analytic = loss_and_grads(model, batch, labels, task).grads;
  if (options.tamper) options.tamper(analytic);

  // Candidates: one coordinate per tensor, then uniform draws over all coordinates.
  std::vector<std::pair<std::string, std::size_t>> offsets;
  std::size_t total = 0;
  for (const auto& [name, g] : analytic) {
    offsets.emplace_back(name, total);
    total += g.values.size();
  }
  Rng rng(options.seed);
  std::set<std::pair<std::string, std::size_t>> tried;
  std::vector<std::pair<std::string, std::size_t>> firsts;
  for (const auto& [name, g] : analytic) {
    firsts.emplace_back(name, static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(g.values.size()) - 1)));
  }
  auto next = [&]() -> std::pair<std::string, std::size_t> {
    if (!firsts.empty()) {
      auto c = firsts.front();
      firsts.erase(firsts.begin());
      return c;
    }
    const auto flat = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
    auto it = std::upper_bound(offsets.begin(), offsets.end(), flat,
                               [](std::size_t v, const auto& o) { return v < o.second; });
    --it;
    return {it->first, flat - it->second};
  };

  const std::uint64_t pattern = loss_with_pattern(model, batch, labels, task).activation_pattern;
  const std::size_t target = std::min(options.max_coordinates, total);
  const std::size_t max_attempts = std::min(total, 20 * target);

  GradCheckResult result;
  while (result.coordinates < target && tried.size() < max_attempts) {
    const auto coord = next();
    if (!tried.insert(coord).second) continue;
    const auto& [name, index] = coord;
    Parameter* p = model.find(name);
    const double original = p->values[index];
    p->values[index] = original + options.step;
    const auto up = loss_with_pattern(model, batch, labels, task);
    p->values[index] = original - options.step;
    const auto down = loss_with_pattern(model, batch, labels, task);
    p->values[index] = original;
    if (options.skip_kinks && (up.activation_pattern != pattern || down.activation_pattern != pattern)) {
      ++result.kinks_skipped;
      continue;
    }

    const double numeric = (up.loss - down.loss) / (2.0 * options.step);
    const double a = analytic.at(name).values[index];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    double rel = std::abs(a - numeric) / denom;
    if (!std::isfinite(rel)) rel = std::numeric_limits<double>::max();
    ++result.coordinates;
    if (rel <= 1e-3) ++result.within_tolerance;
    if (rel > result.max_relative_error || result.worst_parameter.empty()) {
      result.max_relative_error = std::max(rel, result.max_relative_error);
      result.worst_parameter = name;
      result.worst_index = index;
    }
  }
  return result;
}

}  // namespace fpx
