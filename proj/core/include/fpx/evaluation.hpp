#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpx/dataset.hpp"
#include "fpx/network.hpp"

namespace fpx {

// Rows are actual classes, columns predicted.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::int64_t>> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> names);
  ConfusionMatrix(std::vector<std::string> names, std::vector<std::vector<std::int64_t>> table);

  std::size_t size() const noexcept { return classes.size(); }
  std::int64_t total() const noexcept;
  std::int64_t trace() const noexcept;
  int index_of(std::string_view name) const;  // throws UnknownLabel

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const std::string> actual, std::span<const std::string> predicted,
                          const std::vector<std::string>& classes);
ConfusionMatrix confusion(std::span<const int> actual, std::span<const int> predicted,
                          const std::vector<std::string>& classes);

// trace / total; throws EmptyMatrix when total == 0.
double accuracy(const ConfusionMatrix& m);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  // Classes whose precision (no predicted positives) or recall (no actual
  // positives) was undefined and counted as 0.
  std::vector<std::string> flagged;
};

// One-vs-rest for the designated positive class.
PrecisionRecall precision_recall(const ConfusionMatrix& m, int positive);
// Unweighted mean of the one-vs-rest metrics over all classes.
PrecisionRecall macro_precision_recall(const ConfusionMatrix& m);

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct EvalReport {
  Task task = Task::Alteration;
  ConfusionMatrix matrix;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  std::optional<std::string> positive_class;  // binary tasks
  std::string split;
  std::string checkpoint;

  std::string to_json() const;
  static EvalReport from_json(std::string_view json);
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Metrics for a finished matrix. Binary tasks take class 0 as positive.
EvalReport make_report(Task task, ConfusionMatrix matrix, std::string split, std::string checkpoint);

/// Argmax predictions over one split part in index order. Fakeness labels are
/// the collapsed {Altered, Real} view of the alteration labels.
EvalReport evaluate(const Model& model, const Manifest& manifest, const SplitAssignment& split, Task task,
                    SplitPart part, std::string checkpoint_id = {}, int threads = 1);

// Published accuracies, in task order, shown only as a reference row.
struct ReferenceAccuracy {
  Task task;
  double percent;
};
inline constexpr ReferenceAccuracy kReferenceAccuracies[] = {
    {Task::Fakeness, 98.21}, {Task::Alteration, 98.46}, {Task::Gender, 92.52}, {Task::Hand, 97.53}, {Task::Finger, 92.18}};
inline constexpr std::string_view kReferenceRowLabel = "paper, full dataset — not expected at desk scale";

/// Markdown: one confusion table per report in fixed task order (fakeness,
/// alteration, gender, hand, finger) with caption metrics, then an accuracy
/// summary that always includes the reference row.
std::string render_report(std::span<const EvalReport> reports);

}  // namespace fpx
