#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fpx/alteration.hpp"
#include "fpx/dataset.hpp"
#include "fpx/error.hpp"
#include "fpx/evaluation.hpp"
#include "fpx/explain.hpp"
#include "fpx/network.hpp"
#include "fpx/training.hpp"

namespace fpx::cli {
namespace {

namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  bool fp64 = false;
  bool quiet = false;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  std::ostream& log() const {
    static std::ostream null(nullptr);
    return quiet ? null : *err;
  }
};

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDataset: return kEmptyDataset;
    case ErrorCode::DiskOutOfBounds:
    case ErrorCode::SquareOutOfBounds:
    case ErrorCode::InvalidSpec: return kGeometry;
    case ErrorCode::MissingCheckpoint:
    case ErrorCode::MissingHead: return kMissingModel;
    case ErrorCode::EmptySplit:
    case ErrorCode::DegenerateStratum:
    case ErrorCode::DegenerateClass: return kEmptySplit;
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument: return kUsage;
    default: return kIoError;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

bool has_extension(const fs::path& p, std::string_view ext) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e == ext;
}

void save_gray(const GrayImage& img, const fs::path& path) {
  if (has_extension(path, ".bmp")) {
    save_bmp(img, path);
  } else {
    save_png(img, path);
  }
}

Task require_task(const std::string& s) {
  const auto t = parse_task(s);
  check(t.has_value(), ErrorCode::InvalidArgument, "unknown task '" + s + "'");
  return *t;
}

std::optional<Alteration> parse_kind(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "obl" || s == "obliteration") return Alteration::Obliteration;
  if (s == "cr" || s == "rotation" || s == "centralrotation" || s == "central_rotation") {
    return Alteration::CentralRotation;
  }
  if (s == "zcut" || s == "z-cut" || s == "z_cut") return Alteration::ZCut;
  return std::nullopt;
}

PixelPoint parse_point(const std::string& s) {
  const auto comma = s.find(',');
  PixelPoint p;
  bool ok = comma != std::string::npos;
  if (ok) {
    const auto* b = s.data();
    ok = std::from_chars(b, b + comma, p.x).ec == std::errc() &&
         std::from_chars(b + comma + 1, b + s.size(), p.y).ec == std::errc();
  }
  check(ok, ErrorCode::InvalidArgument, "expected --center x,y, got '" + s + "'");
  return p;
}

// Shared flags of train and finetune.
struct TrainFlags {
  std::string manifest;
  std::string split;
  std::string task;
  std::string out;
  std::string report;
  std::string balance = "none";
  TrainConfig cfg;
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--manifest", f.manifest, "Manifest JSON")->required();
  sub->add_option("--split", f.split, "Split JSON")->required();
  sub->add_option("--task", f.task, "fakeness|alteration|gender|hand|finger")->required();
  sub->add_option("--out", f.out, "Checkpoint to write (best validation epoch)")->required();
  sub->add_option("--report", f.report, "Training report JSON");
  sub->add_option("--epochs", f.cfg.epochs)->capture_default_str();
  sub->add_option("--steps", f.cfg.steps_per_epoch, "Steps per epoch (capped at available batches)")
      ->capture_default_str();
  sub->add_option("--batch", f.cfg.batch_size)->capture_default_str();
  sub->add_option("--lr", f.cfg.learning_rate)->capture_default_str();
  sub->add_option("--balance", f.balance, "none|undersample")
      ->check(CLI::IsMember({"none", "undersample"}))
      ->capture_default_str();
}

int finish_training(const Globals& g, const TrainFlags& f, Model& model, const Manifest& manifest,
                    const SplitAssignment& split, Task task) {
  TrainConfig cfg = f.cfg;
  cfg.seed = g.seed;
  cfg.balance = f.balance == "undersample" ? Balance::Undersample : Balance::None;
  TrainOptions options;
  options.progress = &g.log();
  options.checkpoint_path = f.out;
  const auto report = train(model, manifest, split, task, cfg, options);
  save_model(model, f.out);
  if (!f.report.empty()) write_text(f.report, report.to_json());
  g.log() << "best epoch " << report.best_epoch << " val_acc=" << report.best_validation_accuracy << " ("
          << report.wall_seconds << " s)\n";
  return kOk;
}

nlohmann::json reports_json(const std::vector<EvalReport>& reports) {
  if (reports.size() == 1) return nlohmann::json::parse(reports.front().to_json());
  auto arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(nlohmann::json::parse(r.to_json()));
  return arr;
}

// {task, matrix[, classes]} or a full EvalReport.
EvalReport report_from_matrix_file(const fs::path& path, const std::string& task_flag) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::DecodeError, std::string("matrix JSON: ") + ex.what());
  }
  std::string task_name = task_flag;
  if (task_name.empty() && j.contains("task")) task_name = j["task"].get<std::string>();
  check(!task_name.empty(), ErrorCode::InvalidArgument, "--matrix-in needs a task (flag or \"task\" field)");
  const Task task = require_task(task_name);
  check(j.contains("matrix"), ErrorCode::DecodeError, "matrix JSON has no \"matrix\" field");
  auto classes = j.contains("classes") ? j["classes"].get<std::vector<std::string>>() : class_names(task);
  ConfusionMatrix m(std::move(classes), j["matrix"].get<std::vector<std::vector<std::int64_t>>>());
  return make_report(task, std::move(m), "offline", path.filename().string());
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Globals g;
  g.out = &out;
  g.err = &err;

  CLI::App app{"Altered-fingerprint forensics pipeline", "fpx"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for evaluation")
      ->check(CLI::Range(1, 64))
      ->capture_default_str();
  app.add_flag("--fp64", g.fp64, "64-bit float mode (verification)");
  app.add_flag("--quiet", g.quiet, "Suppress progress logs");

  // ingest
  std::string ingest_root, ingest_scheme = "socofing", ingest_out;
  auto* ingest = app.add_subcommand("ingest", "Build a manifest from an image tree");
  ingest->add_option("--root", ingest_root)->required();
  ingest->add_option("--scheme", ingest_scheme, "socofing|explicit")
      ->check(CLI::IsMember({"socofing", "explicit"}))
      ->capture_default_str();
  ingest->add_option("--out", ingest_out, "Manifest JSON to write")->required();

  // synth
  int synth_subjects = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic SOCOFing-style dataset");
  synth->add_option("--subjects", synth_subjects)->required()->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out, "Output directory")->required();

  // alter
  std::string alter_in, alter_type, alter_severity = "medium", alter_out, alter_mask_out, alter_center;
  double alter_magnitude = 0.0;
  bool alter_no_seam = false, alter_bilinear = false;
  auto* alter_cmd = app.add_subcommand("alter", "Apply one synthetic alteration to an image");
  alter_cmd->add_option("--in", alter_in)->required();
  alter_cmd->add_option("--type", alter_type, "obl|cr|zcut")->required();
  alter_cmd->add_option("--severity", alter_severity, "easy|medium|hard")->capture_default_str();
  alter_cmd->add_option("--out", alter_out, "Altered image (.png or .bmp)")->required();
  alter_cmd->add_option("--mask-out", alter_mask_out, "Ground-truth mask PNG");
  alter_cmd->add_option("--center", alter_center, "x,y (default: automatic)");
  auto* magnitude_opt =
      alter_cmd->add_option("--magnitude", alter_magnitude, "Angle (cr), half-size (zcut) or fraction (obl)");
  alter_cmd->add_flag("--no-seam", alter_no_seam, "Z-cut without the darkened scar");
  alter_cmd->add_flag("--bilinear", alter_bilinear, "Bilinear sampling for central rotation");

  // split
  std::string split_manifest_path, split_out;
  std::vector<double> split_fractions{0.5, 0.2, 0.3};
  bool split_by_subject = false;
  auto* split_cmd = app.add_subcommand("split", "Stratified train/validation/test split");
  split_cmd->add_option("--manifest", split_manifest_path)->required();
  split_cmd->add_option("--out", split_out)->required();
  split_cmd->add_option("--fractions", split_fractions, "train val test")->expected(3)->capture_default_str();
  split_cmd->add_flag("--by-subject", split_by_subject, "Keep each subject within one part");

  // train
  TrainFlags train_flags;
  std::string train_preset = "toy";
  auto* train_cmd = app.add_subcommand("train", "Train backbone and head from scratch");
  add_train_flags(train_cmd, train_flags);
  train_cmd->add_option("--preset", train_preset, "toy|small|paper")
      ->check(CLI::IsMember({"toy", "small", "paper"}))
      ->capture_default_str();

  // finetune
  TrainFlags ft_flags;
  std::string ft_checkpoint;
  bool ft_real_only = false;
  auto* ft_cmd = app.add_subcommand("finetune", "Train only a task head on a frozen backbone");
  add_train_flags(ft_cmd, ft_flags);
  ft_cmd->add_option("--checkpoint", ft_checkpoint, "Starting checkpoint")->required();
  ft_cmd->add_flag("--real-only", ft_real_only, "Use only non-altered prints");

  // eval
  std::string eval_checkpoint, eval_manifest, eval_split, eval_part = "test", eval_out, eval_markdown, eval_matrix;
  std::vector<std::string> eval_tasks;
  auto* eval_cmd = app.add_subcommand("eval", "Confusion matrices and metrics");
  eval_cmd->add_option("--checkpoint", eval_checkpoint);
  eval_cmd->add_option("--manifest", eval_manifest);
  eval_cmd->add_option("--split", eval_split);
  eval_cmd->add_option("--part", eval_part, "train|val|test")->capture_default_str();
  eval_cmd->add_option("--task", eval_tasks, "One or more tasks, or 'all'");
  eval_cmd->add_option("--out", eval_out, "Report JSON (stdout when omitted)");
  eval_cmd->add_option("--markdown", eval_markdown, "Markdown report ('-' for stdout)");
  auto* matrix_opt =
      eval_cmd->add_option("--matrix-in", eval_matrix, "Offline mode: metrics of a confusion matrix JSON");
  matrix_opt->excludes(eval_cmd->get_option("--checkpoint"));
  matrix_opt->excludes(eval_cmd->get_option("--manifest"));
  matrix_opt->excludes(eval_cmd->get_option("--split"));

  // cam
  std::string cam_checkpoint, cam_image, cam_task, cam_class, cam_layer{kDefaultCamLayer}, cam_out, cam_heat_out;
  double cam_alpha = 0.5;
  auto* cam_cmd = app.add_subcommand("cam", "Class-activation heatmap of one image");
  cam_cmd->add_option("--checkpoint", cam_checkpoint)->required();
  cam_cmd->add_option("--image", cam_image)->required();
  cam_cmd->add_option("--task", cam_task)->required();
  cam_cmd->add_option("--class", cam_class, "Class name or index (default: predicted)");
  cam_cmd->add_option("--layer", cam_layer)->capture_default_str();
  cam_cmd->add_option("--alpha", cam_alpha)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  cam_cmd->add_option("--out", cam_out, "Overlay PNG")->required();
  cam_cmd->add_option("--heat-out", cam_heat_out, "Raw heat PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*ingest) {
      auto result = build_manifest(ingest_root, *parse_scheme(ingest_scheme));
      for (const auto& s : result.skipped) g.log() << "skipped " << s.path << ": " << s.reason << "\n";
      save_manifest(result.manifest, ingest_out);
      g.log() << result.manifest.size() << " entries -> " << ingest_out << "\n";
      return kOk;
    }
    if (*synth) {
      const auto m = make_synth_dataset(synth_subjects, synth_out, g.seed);
      g.log() << m.size() << " images -> " << synth_out << "\n";
      return kOk;
    }
    if (*alter_cmd) {
      AlterationSpec spec;
      const auto kind = parse_kind(alter_type);
      check(kind.has_value(), ErrorCode::InvalidArgument, "unknown --type '" + alter_type + "'");
      const auto sev = parse_severity(alter_severity);
      check(sev.has_value() && *sev != Severity::None, ErrorCode::InvalidArgument,
            "unknown --severity '" + alter_severity + "'");
      spec.kind = *kind;
      spec.severity = *sev;
      spec.seed = g.seed;
      if (!alter_center.empty()) spec.center = parse_point(alter_center);
      if (magnitude_opt->count() > 0) spec.magnitude = alter_magnitude;
      spec.zcut_seam = !alter_no_seam;
      spec.bilinear_rotation = alter_bilinear;
      const auto result = alter(load_image(alter_in), spec);
      save_gray(result.image, alter_out);
      if (!alter_mask_out.empty()) save_mask_png(result.mask, alter_mask_out);
      const auto& r = result.spec_resolved;
      g.log() << "center=" << r.center->x << "," << r.center->y << " magnitude=" << *r.magnitude
              << " area=" << result.mask.area() << "\n";
      return kOk;
    }
    if (*split_cmd) {
      const auto m = load_manifest(split_manifest_path);
      const SplitFractions f{split_fractions[0], split_fractions[1], split_fractions[2]};
      const auto s = split_manifest(m, f, g.seed, split_by_subject);
      save_split(s, split_out);
      g.log() << "train=" << s.train.size() << " val=" << s.validation.size() << " test=" << s.test.size() << "\n";
      return kOk;
    }
    if (*train_cmd) {
      const Task task = require_task(train_flags.task);
      const auto manifest = load_manifest(train_flags.manifest);
      const auto split = load_split(train_flags.split);
      Model model = build_model(ModelConfig::preset(*parse_preset(train_preset)), {task}, g.seed);
      model.precision = g.fp64 ? Precision::Float64 : Precision::Float32;
      train_flags.cfg.mode = TrainMode::FromScratch;
      return finish_training(g, train_flags, model, manifest, split, task);
    }
    if (*ft_cmd) {
      const Task task = require_task(ft_flags.task);
      Model model = load_model(ft_checkpoint);
      model.precision = g.fp64 ? Precision::Float64 : Precision::Float32;
      const auto manifest = load_manifest(ft_flags.manifest);
      const auto split = load_split(ft_flags.split);
      ft_flags.cfg.mode = TrainMode::FinetuneHead;
      ft_flags.cfg.filter = ft_real_only ? DatasetFilter::RealOnly : DatasetFilter::All;
      return finish_training(g, ft_flags, model, manifest, split, task);
    }
    if (*eval_cmd) {
      std::vector<EvalReport> reports;
      if (!eval_matrix.empty()) {
        check(eval_tasks.size() <= 1, ErrorCode::InvalidArgument, "--matrix-in takes at most one --task");
        reports.push_back(report_from_matrix_file(eval_matrix, eval_tasks.empty() ? "" : eval_tasks.front()));
      } else {
        check(!eval_checkpoint.empty() && !eval_manifest.empty() && !eval_split.empty(), ErrorCode::InvalidArgument,
              "eval needs --checkpoint, --manifest and --split (or --matrix-in)");
        check(!eval_tasks.empty(), ErrorCode::InvalidArgument, "eval needs --task");
        const auto part = parse_split_part(eval_part);
        check(part.has_value(), ErrorCode::InvalidArgument, "unknown --part '" + eval_part + "'");
        Model model = load_model(eval_checkpoint);
        model.precision = g.fp64 ? Precision::Float64 : Precision::Float32;
        const auto manifest = load_manifest(eval_manifest);
        const auto split = load_split(eval_split);
        std::set<Task> tasks;
        for (const auto& t : eval_tasks) {
          if (t == "all") {
            for (Task each : kAllTasks) {
              if (model.has_head(each)) tasks.insert(each);
            }
          } else {
            tasks.insert(require_task(t));
          }
        }
        const auto ckpt_id = fs::path(eval_checkpoint).filename().string();
        for (Task t : tasks) reports.push_back(evaluate(model, manifest, split, t, *part, ckpt_id, g.threads));
      }
      const auto json = reports_json(reports).dump(2) + "\n";
      if (eval_out.empty()) {
        out << json;
      } else {
        write_text(eval_out, json);
      }
      if (eval_markdown == "-") {
        out << render_report(reports);
      } else if (!eval_markdown.empty()) {
        write_text(eval_markdown, render_report(reports));
      }
      for (const auto& r : reports) g.log() << to_string(r.task) << " accuracy=" << r.accuracy << "\n";
      return kOk;
    }
    if (*cam_cmd) {
      const Task task = require_task(cam_task);
      Model model = load_model(cam_checkpoint);
      model.precision = g.fp64 ? Precision::Float64 : Precision::Float32;
      const auto img = load_image(cam_image);
      std::optional<int> cls;
      if (!cam_class.empty()) {
        const auto names = class_names(task);
        int idx = -1;
        for (std::size_t i = 0; i < names.size(); ++i) {
          std::string a = names[i], b = cam_class;
          for (auto* s : {&a, &b}) {
            std::transform(s->begin(), s->end(), s->begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
          }
          if (a == b) idx = static_cast<int>(i);
        }
        if (idx < 0) {
          const auto* b = cam_class.data();
          if (std::from_chars(b, b + cam_class.size(), idx).ec != std::errc()) idx = -1;
        }
        check(idx >= 0 && idx < num_classes(task), ErrorCode::InvalidArgument, "unknown --class '" + cam_class + "'");
        cls = idx;
      }
      const auto map = grad_cam(model, img, task, cls, cam_layer);
      save_png(overlay(img, map, cam_alpha), cam_out);
      save_png(heat_to_gray(map), cam_heat_out);
      nlohmann::json j{{"task", to_string(task)},
                       {"class_index", map.class_index},
                       {"class", class_names(task).at(static_cast<std::size_t>(map.class_index))},
                       {"layer", map.source_layer}};
      out << j.dump(2) << "\n";
      return kOk;
    }
  } catch (const Error& e) {
    err << "fpx: " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "fpx: " << e.what() << "\n";
    return kIoError;
  }
  return kUsage;
}

}  // namespace fpx::cli
