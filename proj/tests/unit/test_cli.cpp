#include <gtest/gtest.h>

#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "fpx/alteration.hpp"
#include "fpx/dataset.hpp"
#include "fpx/evaluation.hpp"
#include "fpx/network.hpp"
#include "test_util.hpp"

namespace fpx {
namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result fpx_run(std::vector<std::string> args) {
  args.insert(args.begin(), "fpx");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string data(const char* name) { return std::string(FPX_TEST_DATA_DIR) + "/" + name; }

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(fpx_run({"--help"}).code, 0);
  for (const char* sub : {"ingest", "synth", "alter", "split", "train", "finetune", "eval", "cam"}) {
    const auto r = fpx_run({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
  const auto unknown = fpx_run({"synth", "--subjects", "1", "--out", "x", "--bogus"});
  EXPECT_EQ(unknown.code, cli::kUsage);
  EXPECT_FALSE(unknown.err.empty());
  EXPECT_EQ(fpx_run({}).code, cli::kUsage);
  EXPECT_EQ(fpx_run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(fpx_run({"synth", "--subjects", "0", "--out", "x"}).code, cli::kUsage);
}

TEST(Cli, SynthIsReproducible) {
  test::TempDir dir;
  ASSERT_EQ(fpx_run({"synth", "--subjects", "10", "--out", (dir / "a").string(), "--seed", "4", "--quiet"}).code, 0);
  ASSERT_EQ(fpx_run({"--seed", "4", "synth", "--subjects", "10", "--out", (dir / "b").string()}).code, 0);
  const auto m = load_manifest(dir / "a/manifest.json");
  EXPECT_EQ(m.size(), 1000u);  // 10 * (10 + 90)
  EXPECT_EQ(read_file(dir / "a/manifest.json"), read_file(dir / "b/manifest.json"));
  for (std::size_t i = 0; i < m.size(); i += 53) {
    EXPECT_EQ(read_file(dir / "a" / m.entries[i].path), read_file(dir / "b" / m.entries[i].path));
  }
}

TEST(Cli, IngestTreeAndEmptyDirectory) {
  test::TempDir dir;
  std::filesystem::create_directories(dir / "tree/Real");
  std::filesystem::create_directories(dir / "tree/Altered/Altered-Easy");
  std::filesystem::create_directories(dir / "empty");
  save_bmp(GrayImage(96, 103), dir / "tree/Real/4__F_Right_ring_finger.BMP");
  save_bmp(GrayImage(96, 103), dir / "tree/Altered/Altered-Easy/4__F_Right_ring_finger_CR.BMP");
  const auto out = (dir / "m.json").string();
  ASSERT_EQ(fpx_run({"ingest", "--root", (dir / "tree").string(), "--out", out}).code, 0);
  const auto first = read_file(out);
  ASSERT_EQ(fpx_run({"ingest", "--root", (dir / "tree").string(), "--out", out}).code, 0);
  EXPECT_EQ(read_file(out), first);
  const auto m = load_manifest(out);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(load_image(m.resolve(m.entries[0])).width(), 96);
  EXPECT_EQ(fpx_run({"ingest", "--root", (dir / "empty").string(), "--out", (dir / "e.json").string()}).code,
            cli::kEmptyDataset);
  EXPECT_EQ(fpx_run({"ingest", "--root", (dir / "missing").string(), "--out", (dir / "e.json").string()}).code,
            cli::kIoError);
}

TEST(Cli, AlterWritesImageAndMask) {
  test::TempDir dir;
  save_bmp(synth_fingerprint(96, 103, RidgePattern::Loop, 1), dir / "in.bmp");
  std::vector<std::string> args{"alter",        "--in",       (dir / "in.bmp").string(),  "--type",
                                "zcut",         "--severity", "hard",                     "--seed",
                                "5",            "--out",      (dir / "o.png").string(),   "--mask-out",
                                (dir / "m.png").string()};
  ASSERT_EQ(fpx_run(args).code, 0);
  const auto out = load_image(dir / "o.png");
  EXPECT_EQ(out.width(), 96);
  EXPECT_EQ(out.height(), 103);
  EXPECT_GT(load_mask(dir / "m.png").area(), 0u);
  const auto o1 = read_file(dir / "o.png");
  const auto m1 = read_file(dir / "m.png");
  ASSERT_EQ(fpx_run(args).code, 0);
  EXPECT_EQ(read_file(dir / "o.png"), o1);
  EXPECT_EQ(read_file(dir / "m.png"), m1);
  for (const char* kind : {"obl", "cr"}) {
    EXPECT_EQ(fpx_run({"alter", "--in", (dir / "in.bmp").string(), "--type", kind, "--out",
                       (dir / (std::string(kind) + ".bmp")).string()})
                  .code,
              0);
  }
}

TEST(Cli, AlterGeometryAndDecodeFailures) {
  test::TempDir dir;
  save_png(GrayImage(16, 16, 0), dir / "tiny.png");
  // s = round(0.30 * 16) = 5; a center 12 px from the left edge needs x <= 10.
  EXPECT_EQ(fpx_run({"alter", "--in", (dir / "tiny.png").string(), "--type", "zcut", "--severity", "hard",
                     "--center", "12,8", "--out", (dir / "o.png").string()})
                .code,
            cli::kGeometry);
  EXPECT_EQ(fpx_run({"alter", "--in", (dir / "tiny.png").string(), "--type", "cr", "--severity", "hard",
                     "--center", "2,2", "--out", (dir / "o.png").string()})
                .code,
            cli::kGeometry);
  const std::vector<std::uint8_t> junk{'B', 'M', 1, 2, 3};
  write_file(dir / "bad.bmp", junk);
  EXPECT_EQ(fpx_run({"alter", "--in", (dir / "bad.bmp").string(), "--type", "obl", "--out",
                     (dir / "o.png").string()})
                .code,
            cli::kIoError);
  EXPECT_EQ(fpx_run({"alter", "--in", (dir / "tiny.png").string(), "--type", "melt", "--out",
                     (dir / "o.png").string()})
                .code,
            cli::kUsage);
}

TEST(Cli, OfflineMatrixMetrics) {
  const auto r = fpx_run({"eval", "--matrix-in", data("table1.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = EvalReport::from_json(r.out);
  EXPECT_NEAR(report.accuracy, 0.98209, 5e-6);
  EXPECT_EQ(report.positive_class, "Altered");
  EXPECT_NEAR(report.per_class[0].recall, 0.98169, 5e-6);
  const auto t2 = fpx_run({"eval", "--matrix-in", data("table2.json"), "--markdown", "-"});
  ASSERT_EQ(t2.code, 0) << t2.err;
  EXPECT_NE(t2.out.find("98.46%"), std::string::npos);
  EXPECT_NE(t2.out.find("not expected at desk scale"), std::string::npos);
  EXPECT_EQ(fpx_run({"eval", "--matrix-in", "/nonexistent.json"}).code, cli::kIoError);
}

TEST(Cli, PipelineTrainFinetuneEvalCam) {
  test::TempDir dir;
  const auto d = [&](const char* s) { return (dir / s).string(); };
  ASSERT_EQ(fpx_run({"synth", "--subjects", "2", "--out", d("ds"), "--quiet"}).code, 0);
  ASSERT_EQ(fpx_run({"split", "--manifest", d("ds/manifest.json"), "--out", d("split.json"), "--seed", "2"}).code,
            0);
  const std::vector<std::string> small{"--epochs", "1", "--steps", "2", "--batch", "8", "--quiet"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), small.begin(), small.end());
    return a;
  };
  auto r = fpx_run(with({"train", "--manifest", d("ds/manifest.json"), "--split", d("split.json"), "--task",
                         "alteration", "--out", d("base.rfg"), "--report", d("train.json")}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto train_report = nlohmann::json::parse(std::string(
      reinterpret_cast<const char*>(read_file(d("train.json")).data()), read_file(d("train.json")).size()));
  EXPECT_EQ(train_report["epochs"].size(), 1u);

  r = fpx_run(with({"finetune", "--checkpoint", d("base.rfg"), "--manifest", d("ds/manifest.json"), "--split",
                    d("split.json"), "--task", "gender", "--real-only", "--balance", "undersample", "--out",
                    d("gender.rfg")}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(backbone_checksum(load_model(d("gender.rfg"))), backbone_checksum(load_model(d("base.rfg"))));

  r = fpx_run({"eval", "--checkpoint", d("gender.rfg"), "--manifest", d("ds/manifest.json"), "--split",
               d("split.json"), "--task", "gender", "--out", d("eval.json"), "--markdown", d("report.md"),
               "--threads", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto bytes = read_file(d("eval.json"));
  const auto rep = EvalReport::from_json(std::string(bytes.begin(), bytes.end()));
  EXPECT_EQ(rep.task, Task::Gender);
  EXPECT_EQ(rep.matrix.total(), static_cast<std::int64_t>(load_split(d("split.json")).test.size()));

  r = fpx_run({"eval", "--checkpoint", d("gender.rfg"), "--manifest", d("ds/manifest.json"), "--split",
               d("split.json"), "--task", "all"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out).size(), 2u);  // alteration and gender heads

  const auto img = d("ds/Altered/Altered-Hard/1__M_Left_thumb_finger_Zcut.BMP");
  r = fpx_run({"cam", "--checkpoint", d("base.rfg"), "--image", img, "--task", "alteration", "--out",
               d("overlay.png"), "--heat-out", d("heat.png")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_image(d("heat.png")).width(), 96);
  EXPECT_EQ(decode_png(read_file(d("overlay.png"))).height(), 103);
  EXPECT_EQ(nlohmann::json::parse(r.out)["layer"], "embed");

  // failures
  EXPECT_EQ(fpx_run({"eval", "--checkpoint", d("nope.rfg"), "--manifest", d("ds/manifest.json"), "--split",
                     d("split.json"), "--task", "gender"})
                .code,
            cli::kMissingModel);
  EXPECT_EQ(fpx_run({"eval", "--checkpoint", d("base.rfg"), "--manifest", d("ds/manifest.json"), "--split",
                     d("split.json"), "--task", "finger"})
                .code,
            cli::kMissingModel);
  save_split(SplitAssignment{}, d("empty_split.json"));
  EXPECT_EQ(fpx_run({"eval", "--checkpoint", d("base.rfg"), "--manifest", d("ds/manifest.json"), "--split",
                     d("empty_split.json"), "--task", "alteration"})
                .code,
            cli::kEmptySplit);
  EXPECT_EQ(fpx_run(with({"finetune", "--checkpoint", d("nope.rfg"), "--manifest", d("ds/manifest.json"),
                          "--split", d("split.json"), "--task", "hand", "--out", d("h.rfg")}))
                .code,
            cli::kMissingModel);
}

}  // namespace
}  // namespace fpx
