#include <gtest/gtest.h>

#include <numeric>

#include "fpx/alteration.hpp"
#include "fpx/error.hpp"
#include "fpx/evaluation.hpp"
#include "test_util.hpp"

namespace fpx {
namespace {

const ConfusionMatrix kTable1({"Altered", "Real"}, {{43970, 820}, {9, 1492}});
const ConfusionMatrix kTable2({"Obl", "Cr", "Z-cut", "Real"},
                              {{4460, 1, 0, 6}, {33, 4019, 19, 27}, {13, 24, 3695, 13}, {3, 4, 69, 1424}});

TEST(Evaluation, ConfusionCountsRowsActual) {
  const std::vector<std::string> actual{"A", "A", "B"}, predicted{"A", "B", "B"};
  const auto m = confusion(actual, predicted, {"A", "B"});
  EXPECT_EQ(m.counts, (std::vector<std::vector<std::int64_t>>{{1, 1}, {0, 1}}));
  EXPECT_EQ(m.total(), 3);
  const std::vector<int> a{0, 1, 2, 2}, p{0, 1, 2, 2};
  const auto d = confusion(a, p, {"x", "y", "z"});
  EXPECT_EQ(d.trace(), d.total());
  EXPECT_EQ(accuracy(d), 1.0);
}

TEST(Evaluation, ConfusionErrors) {
  const std::vector<std::string> a{"A"}, p{"A", "B"}, q{"C"};
  try {
    confusion(a, p, {"A", "B"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
  try {
    confusion(a, q, {"A", "B"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownLabel);
  }
  const auto empty = confusion(std::vector<std::string>{}, std::vector<std::string>{}, {"A", "B"});
  EXPECT_EQ(empty.total(), 0);
  try {
    accuracy(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyMatrix);
  }
  EXPECT_THROW(precision_recall(empty, 0), Error);
}

TEST(Evaluation, PublishedAccuracies) {
  // trace / total computed by hand: (43970 + 1492) / 46291 and 13598 / 13810
  EXPECT_NEAR(accuracy(kTable1), 45462.0 / 46291.0, 1e-15);
  EXPECT_NEAR(accuracy(kTable1), 0.98209, 5e-6);
  EXPECT_NEAR(accuracy(kTable2), 13598.0 / 13810.0, 1e-15);
  EXPECT_NEAR(accuracy(kTable2), 0.98465, 5e-6);
}

TEST(Evaluation, PublishedFakenessPrecisionRecall) {
  const auto pr = precision_recall(kTable1, 0);
  EXPECT_NEAR(pr.recall, 43970.0 / 44790.0, 1e-15);
  EXPECT_NEAR(pr.recall, 0.98169, 5e-6);
  EXPECT_NEAR(pr.precision, 43970.0 / 43979.0, 1e-15);
  EXPECT_NEAR(pr.precision, 0.99980, 5e-6);
  EXPECT_TRUE(pr.flagged.empty());
}

TEST(Evaluation, IdentityMatrix) {
  const ConfusionMatrix m({"a", "b"}, {{5, 0}, {0, 5}});
  EXPECT_EQ(accuracy(m), 1.0);
  const auto pr = precision_recall(m, 0);
  EXPECT_EQ(pr.precision, 1.0);
  EXPECT_EQ(pr.recall, 1.0);
  const auto macro = macro_precision_recall(m);
  EXPECT_EQ(macro.precision, 1.0);
  EXPECT_EQ(macro.recall, 1.0);
}

TEST(Evaluation, MacroAveragingAndFlags) {
  // class c never predicted and never present
  const ConfusionMatrix m({"a", "b", "c"}, {{3, 1, 0}, {2, 4, 0}, {0, 0, 0}});
  const auto macro = macro_precision_recall(m);
  EXPECT_NEAR(macro.precision, (3.0 / 5 + 4.0 / 5 + 0.0) / 3, 1e-15);
  EXPECT_NEAR(macro.recall, (3.0 / 4 + 4.0 / 6 + 0.0) / 3, 1e-15);
  EXPECT_EQ(macro.flagged, (std::vector<std::string>{"c"}));
}

TEST(Evaluation, PermutingClassesKeepsMetrics) {
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<std::string> names(4);
  std::vector<std::vector<std::int64_t>> counts(4, std::vector<std::int64_t>(4));
  for (int i = 0; i < 4; ++i) {
    names[perm[i]] = kTable2.classes[i];
    for (int j = 0; j < 4; ++j) counts[perm[i]][perm[j]] = kTable2.counts[i][j];
  }
  const ConfusionMatrix p(names, counts);
  EXPECT_DOUBLE_EQ(accuracy(p), accuracy(kTable2));
  EXPECT_NEAR(macro_precision_recall(p).precision, macro_precision_recall(kTable2).precision, 1e-15);
  EXPECT_NEAR(macro_precision_recall(p).recall, macro_precision_recall(kTable2).recall, 1e-15);
}

TEST(Evaluation, ReportJsonRoundTrip) {
  const auto r = make_report(Task::Alteration, kTable2, "test", "model.rfg");
  EXPECT_FALSE(r.positive_class.has_value());
  for (const auto& c : r.per_class) {
    EXPECT_GE(c.precision, 0.0);
    EXPECT_LE(c.recall, 1.0);
  }
  const auto back = EvalReport::from_json(r.to_json());
  EXPECT_EQ(back, r);
  EXPECT_EQ(back.to_json(), r.to_json());
  const auto f = make_report(Task::Fakeness, kTable1, "test", "x");
  EXPECT_EQ(f.positive_class, "Altered");
  EXPECT_EQ(EvalReport::from_json(f.to_json()), f);
  EXPECT_NE(f.to_json().find("\"positive_class\""), std::string::npos);
  EXPECT_THROW(EvalReport::from_json("{\"task\": 3}"), Error);
}

TEST(Evaluation, RenderReportLayout) {
  const auto one = make_report(Task::Fakeness, kTable1, "test", "ckpt");
  const auto md1 = render_report(std::span(&one, 1));
  EXPECT_NE(md1.find("| **Altered** | 43970 | 820 |"), std::string::npos) << md1;
  EXPECT_NE(md1.find("**Accuracy**: 98.21%"), std::string::npos);
  EXPECT_NE(md1.find("**Recall** (Altered): 98.17%"), std::string::npos);
  EXPECT_NE(md1.find("paper, full dataset — not expected at desk scale"), std::string::npos);
  EXPECT_NE(md1.find("98.21% | 98.46% | 92.52% | 97.53% | 92.18%"), std::string::npos);
  EXPECT_NE(md1.find("macro"), std::string::npos);
  EXPECT_NE(md1.find("99.27%"), std::string::npos);

  std::vector<EvalReport> five;
  const ConfusionMatrix g({"Male", "Female"}, {{8, 2}, {1, 9}});
  const ConfusionMatrix h({"Left", "Right"}, {{9, 1}, {0, 10}});
  const ConfusionMatrix fi({"Thumb", "Index", "Middle", "Ring", "Little"},
                           {{2, 0, 0, 0, 0}, {0, 2, 0, 0, 0}, {0, 0, 2, 0, 0}, {0, 0, 0, 2, 0}, {0, 0, 0, 1, 1}});
  five.push_back(make_report(Task::Finger, fi, "test", ""));
  five.push_back(make_report(Task::Hand, h, "test", ""));
  five.push_back(make_report(Task::Alteration, kTable2, "test", ""));
  five.push_back(make_report(Task::Gender, g, "test", ""));
  five.push_back(one);
  const auto md = render_report(five);
  const auto pos = [&](const char* s) { return md.find(s); };
  EXPECT_LT(pos("## Fakeness"), pos("## Alteration type"));
  EXPECT_LT(pos("## Alteration type"), pos("## Gender"));
  EXPECT_LT(pos("## Gender"), pos("## Hand"));
  EXPECT_LT(pos("## Hand"), pos("## Finger"));
  EXPECT_LT(pos("## Finger"), pos("## Accuracy summary"));
  EXPECT_NE(pos("| This run | 98.21% | 98.46% | 85.00% | 95.00% | 90.00% |"), std::string::npos) << md;
}

TEST(Evaluation, EvaluateOracleAndConstantPredictors) {
  test::TempDir dir;
  const auto manifest = make_synth_dataset(2, dir.path(), 3);
  const auto split = split_manifest(manifest, {}, 3);
  auto cfg = test::tiny_config();
  auto m = build_model(cfg, {Task::Hand, Task::Fakeness}, 1);
  // Zero weights and a biased head predict one class for everything.
  auto& head = m.heads.at(Task::Hand);
  std::fill(head.weight.values.begin(), head.weight.values.end(), 0.0);
  head.bias.values = {0.0, 1.0};
  const auto r = evaluate(m, manifest, split, Task::Hand, SplitPart::Test, "const", 1);
  EXPECT_EQ(r.matrix.total(), static_cast<std::int64_t>(split.test.size()));
  EXPECT_EQ(r.matrix.counts[0][0], 0);
  EXPECT_EQ(r.matrix.counts[1][0], 0);
  // both hands are equally frequent in every stratum of synthetic data
  std::int64_t right = 0;
  for (auto i : split.test) right += manifest.entries[i].label.hand == Hand::Right;
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(right) / static_cast<double>(split.test.size()));
  EXPECT_EQ(r.split, "test");
  EXPECT_EQ(r.checkpoint, "const");

  // Fakeness rows collapse the four-way labels.
  const auto f = evaluate(m, manifest, split, Task::Fakeness, SplitPart::Test, "", 3);
  std::int64_t real = 0;
  for (auto i : split.test) real += manifest.entries[i].label.alteration == Alteration::Real;
  EXPECT_EQ(f.matrix.counts[1][0] + f.matrix.counts[1][1], real);
  EXPECT_EQ(evaluate(m, manifest, split, Task::Fakeness, SplitPart::Test, "", 1).to_json(), f.to_json());

  try {
    evaluate(m, manifest, split, Task::Gender, SplitPart::Test, "", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingHead);
  }
  SplitAssignment empty;
  try {
    evaluate(m, manifest, empty, Task::Hand, SplitPart::Test, "", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySplit);
  }
}

TEST(Evaluation, PerfectPredictorGivesDiagonal) {
  // Labels as predictions: perfect predictor by construction.
  std::vector<int> actual;
  for (int i = 0; i < 40; ++i) actual.push_back(i % 5);
  const auto m = confusion(actual, actual, class_names(Task::Finger));
  EXPECT_EQ(accuracy(m), 1.0);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) EXPECT_EQ(m.counts[i][j], i == j ? 8 : 0);
  }
}

}  // namespace
}  // namespace fpx
