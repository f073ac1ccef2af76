#include "fpx/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fpx/error.hpp"
#include "fpx/training.hpp"

namespace fpx {

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> names)
    : classes(std::move(names)), counts(classes.size(), std::vector<std::int64_t>(classes.size(), 0)) {}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> names, std::vector<std::vector<std::int64_t>> table)
    : classes(std::move(names)), counts(std::move(table)) {
  check(counts.size() == classes.size(), ErrorCode::ShapeMismatch, "confusion matrix must be square");
  for (const auto& row : counts) {
    check(row.size() == classes.size(), ErrorCode::ShapeMismatch, "confusion matrix must be square");
    for (auto v : row) check(v >= 0, ErrorCode::InvalidArgument, "confusion counts must be nonnegative");
  }
}

std::int64_t ConfusionMatrix::total() const noexcept {
  std::int64_t t = 0;
  for (const auto& row : counts) {
    for (auto v : row) t += v;
  }
  return t;
}

std::int64_t ConfusionMatrix::trace() const noexcept {
  std::int64_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

int ConfusionMatrix::index_of(std::string_view name) const {
  const auto it = std::find(classes.begin(), classes.end(), name);
  check(it != classes.end(), ErrorCode::UnknownLabel, "unknown class '" + std::string(name) + "'");
  return static_cast<int>(it - classes.begin());
}

ConfusionMatrix confusion(std::span<const std::string> actual, std::span<const std::string> predicted,
                          const std::vector<std::string>& classes) {
  check(actual.size() == predicted.size(), ErrorCode::LengthMismatch, "actual and predicted lengths differ");
  ConfusionMatrix m(classes);
  for (std::size_t k = 0; k < actual.size(); ++k) ++m.counts[m.index_of(actual[k])][m.index_of(predicted[k])];
  return m;
}

ConfusionMatrix confusion(std::span<const int> actual, std::span<const int> predicted,
                          const std::vector<std::string>& classes) {
  check(actual.size() == predicted.size(), ErrorCode::LengthMismatch, "actual and predicted lengths differ");
  ConfusionMatrix m(classes);
  const int n = static_cast<int>(classes.size());
  for (std::size_t k = 0; k < actual.size(); ++k) {
    check(actual[k] >= 0 && actual[k] < n && predicted[k] >= 0 && predicted[k] < n, ErrorCode::UnknownLabel,
          "label index out of range");
    ++m.counts[actual[k]][predicted[k]];
  }
  return m;
}

double accuracy(const ConfusionMatrix& m) {
  const auto total = m.total();
  check(total > 0, ErrorCode::EmptyMatrix, "accuracy of an empty confusion matrix");
  return static_cast<double>(m.trace()) / static_cast<double>(total);
}

namespace {

struct OneVsRest {
  double precision = 0.0;
  double recall = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
};

OneVsRest one_vs_rest(const ConfusionMatrix& m, int c) {
  std::int64_t predicted = 0;
  std::int64_t actual = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    predicted += m.counts[i][c];
    actual += m.counts[c][i];
  }
  const auto tp = m.counts[c][c];
  OneVsRest r;
  r.precision_undefined = predicted == 0;
  r.recall_undefined = actual == 0;
  r.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  r.recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
  return r;
}

}  // namespace

PrecisionRecall precision_recall(const ConfusionMatrix& m, int positive) {
  check(m.total() > 0, ErrorCode::EmptyMatrix, "precision/recall of an empty confusion matrix");
  check(positive >= 0 && positive < static_cast<int>(m.size()), ErrorCode::UnknownLabel, "positive class out of range");
  const auto r = one_vs_rest(m, positive);
  PrecisionRecall out{r.precision, r.recall, {}};
  if (r.precision_undefined || r.recall_undefined) out.flagged.push_back(m.classes[positive]);
  return out;
}

PrecisionRecall macro_precision_recall(const ConfusionMatrix& m) {
  check(m.total() > 0, ErrorCode::EmptyMatrix, "precision/recall of an empty confusion matrix");
  PrecisionRecall out;
  for (std::size_t c = 0; c < m.size(); ++c) {
    const auto r = one_vs_rest(m, static_cast<int>(c));
    out.precision += r.precision;
    out.recall += r.recall;
    if (r.precision_undefined || r.recall_undefined) out.flagged.push_back(m.classes[c]);
  }
  out.precision /= static_cast<double>(m.size());
  out.recall /= static_cast<double>(m.size());
  return out;
}

EvalReport make_report(Task task, ConfusionMatrix matrix, std::string split, std::string checkpoint) {
  EvalReport r;
  r.task = task;
  r.accuracy = accuracy(matrix);
  for (std::size_t c = 0; c < matrix.size(); ++c) {
    const auto m = one_vs_rest(matrix, static_cast<int>(c));
    r.per_class.push_back({matrix.classes[c], m.precision, m.recall});
  }
  const auto macro = macro_precision_recall(matrix);
  r.macro_precision = macro.precision;
  r.macro_recall = macro.recall;
  if (matrix.size() == 2) r.positive_class = matrix.classes[0];
  r.matrix = std::move(matrix);
  r.split = std::move(split);
  r.checkpoint = std::move(checkpoint);
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& c : per_class) per[c.name] = {{"precision", c.precision}, {"recall", c.recall}};
  nlohmann::json j{{"task", to_string(task)},
                   {"classes", matrix.classes},
                   {"matrix", matrix.counts},
                   {"accuracy", accuracy},
                   {"per_class", per},
                   {"macro", {{"precision", macro_precision}, {"recall", macro_recall}}},
                   {"split", split},
                   {"checkpoint", checkpoint}};
  if (positive_class) j["positive_class"] = *positive_class;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    const auto task = parse_task(j.at("task").get<std::string>());
    check(task.has_value(), ErrorCode::DecodeError, "unknown task in report");
    r.task = *task;
    r.matrix = ConfusionMatrix(j.at("classes").get<std::vector<std::string>>(),
                               j.at("matrix").get<std::vector<std::vector<std::int64_t>>>());
    r.accuracy = j.at("accuracy").get<double>();
    for (const auto& name : r.matrix.classes) {
      const auto& c = j.at("per_class").at(name);
      r.per_class.push_back({name, c.at("precision").get<double>(), c.at("recall").get<double>()});
    }
    r.macro_precision = j.at("macro").at("precision").get<double>();
    r.macro_recall = j.at("macro").at("recall").get<double>();
    if (j.contains("positive_class")) r.positive_class = j["positive_class"].get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::DecodeError, std::string("report JSON: ") + ex.what());
  }
}

EvalReport evaluate(const Model& model, const Manifest& manifest, const SplitAssignment& split, Task task,
                    SplitPart part, std::string checkpoint_id, int threads) {
  check(model.has_head(task), ErrorCode::MissingHead, "model has no " + std::string(to_string(task)) + " head");
  const auto& indices = split.part(part);
  check(!indices.empty(), ErrorCode::EmptySplit, "split part '" + std::string(to_string(part)) + "' is empty");
  const int c = num_classes(task);
  constexpr std::size_t kChunk = 32;
  const std::size_t n_chunks = (indices.size() + kChunk - 1) / kChunk;
  std::vector<int> predicted(indices.size());
  std::vector<int> actual(indices.size());

  // Chunks are independent; each worker writes only its own slots, so the
  // result does not depend on the thread count.
  auto run_chunk = [&](std::size_t chunk) {
    const std::size_t start = chunk * kChunk;
    const std::size_t end = std::min(indices.size(), start + kChunk);
    std::vector<Tensor> samples;
    for (std::size_t k = start; k < end; ++k) {
      const auto& entry = manifest.entries.at(indices[k]);
      samples.push_back(preprocess(load_image(manifest.resolve(entry)), model.config.input_height,
                                   model.config.input_width));
      actual[k] = task_label(task, entry.label);
    }
    const auto logits = forward(model, stack_batch(samples), task);
    for (std::size_t k = start; k < end; ++k) {
      const auto* row = logits.values.data() + (k - start) * c;
      predicted[k] = static_cast<int>(std::max_element(row, row + c) - row);
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, 64));
  if (workers == 1 || n_chunks == 1) {
    for (std::size_t i = 0; i < n_chunks; ++i) run_chunk(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n_chunks; i += workers) run_chunk(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return make_report(task, confusion(actual, predicted, class_names(task)), std::string(to_string(part)),
                     std::move(checkpoint_id));
}

namespace {

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

std::string_view title(Task t) {
  switch (t) {
    case Task::Fakeness: return "Fakeness";
    case Task::Alteration: return "Alteration type";
    case Task::Gender: return "Gender";
    case Task::Hand: return "Hand";
    case Task::Finger: return "Finger";
  }
  return "?";
}

}  // namespace

std::string render_report(std::span<const EvalReport> reports) {
  std::vector<const EvalReport*> ordered;
  for (Task t : kAllTasks) {
    for (const auto& r : reports) {
      if (r.task == t) ordered.push_back(&r);
    }
  }
  std::ostringstream md;
  md << "# Classification results\n";
  for (const auto* r : ordered) {
    md << "\n## " << title(r->task) << "\n\n";
    md << "Rows: actual class. Columns: predicted class. Split: " << (r->split.empty() ? "-" : r->split);
    if (!r->checkpoint.empty()) md << ". Checkpoint: " << r->checkpoint;
    md << ".\n\n|";
    for (const auto& c : r->matrix.classes) md << " | " << c;
    md << " |\n|---";
    for (std::size_t i = 0; i < r->matrix.size(); ++i) md << "|---:";
    md << "|\n";
    for (std::size_t i = 0; i < r->matrix.size(); ++i) {
      md << "| **" << r->matrix.classes[i] << "**";
      for (auto v : r->matrix.counts[i]) md << " | " << v;
      md << " |\n";
    }
    md << "\n**Accuracy**: " << percent(r->accuracy);
    if (r->positive_class) {
      const int pos = r->matrix.index_of(*r->positive_class);
      md << ", **Precision** (" << *r->positive_class << "): " << percent(r->per_class[pos].precision)
         << ", **Recall** (" << *r->positive_class << "): " << percent(r->per_class[pos].recall);
    } else {
      md << ", **Precision** (macro): " << percent(r->macro_precision) << ", **Recall** (macro): "
         << percent(r->macro_recall);
    }
    md << "\n";
  }

  md << "\n## Accuracy summary\n\n| |";
  for (Task t : kAllTasks) md << " " << title(t) << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < std::size(kAllTasks); ++i) md << "---:|";
  md << "\n| This run |";
  for (Task t : kAllTasks) {
    const auto it = std::find_if(ordered.begin(), ordered.end(), [&](const auto* r) { return r->task == t; });
    md << " " << (it == ordered.end() ? std::string("-") : percent((*it)->accuracy)) << " |";
  }
  md << "\n| " << kReferenceRowLabel << " |";
  for (const auto& ref : kReferenceAccuracies) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", ref.percent);
    md << " " << buf << " |";
  }
  md << "\n\nReference figures are quoted for comparison only. Multiclass precision and recall are unweighted "
        "macro averages over one-vs-rest classes. The published fakeness table states a precision of 99.27% in "
        "its caption and 99.97% in the accompanying text, while its printed counts give 99.98% (Altered as "
        "positive); metrics here are always computed from the counts.\n";
  return md.str();
}

}  // namespace fpx
