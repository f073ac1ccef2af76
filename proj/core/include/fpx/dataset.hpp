#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fpx/image.hpp"
#include "fpx/labels.hpp"

namespace fpx {

enum class ManifestScheme { Socofing, Explicit };

std::string_view to_string(ManifestScheme s) noexcept;
std::optional<ManifestScheme> parse_scheme(std::string_view s);

struct ManifestEntry {
  std::string path;  // relative to Manifest::root, '/'-separated
  RecordLabel label;
  std::string mask_path;  // optional ground-truth alteration mask (synthetic data)

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::filesystem::path root;
  ManifestScheme scheme = ManifestScheme::Explicit;
  std::vector<ManifestEntry> entries;  // sorted by path, unique paths

  std::filesystem::path resolve(const ManifestEntry& e) const { return root / e.path; }
  std::size_t size() const noexcept { return entries.size(); }
};

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct BuildResult {
  Manifest manifest;
  std::vector<SkippedFile> skipped;
};

/// Parses a SOCOFing-style file name such as "1__M_Left_index_finger.BMP" or
/// "Altered/Altered-Hard/37__F_Right_thumb_finger_Zcut.BMP". The alteration token
/// (Obl, CR, Zcut) is the optional last name token; severity comes from an
/// Easy/Medium/Hard directory component ("Altered-Hard" or "Hard").
///
/// Throws Error(MalformedName) on missing or unrecognized tokens, and for altered
/// files whose path carries no severity component.
RecordLabel parse_socofing_name(std::string_view relative_path);

/// Inverse of parse_socofing_name: the canonical relative path for a label.
std::string render_socofing_name(const RecordLabel& label);

/// Socofing: walks `root` recursively for .bmp files, parsing each name.
/// Explicit: reads `root/manifest.json`.
/// Unparseable or missing files are reported in `skipped`; zero entries throws EmptyDataset.
BuildResult build_manifest(const std::filesystem::path& root, ManifestScheme scheme);

// JSON array of {path, subject_id, gender, hand, finger, alteration, severity[, mask]}.
std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(std::string_view json, const std::filesystem::path& root);
void save_manifest(const Manifest& m, const std::filesystem::path& file);
// Paths in the file are relative to the file's directory.
Manifest load_manifest(const std::filesystem::path& file);

struct SplitFractions {
  double train = 0.5;
  double validation = 0.2;
  double test = 0.3;
};

enum class SplitPart { Train, Validation, Test };

struct SplitAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;

  const std::vector<std::size_t>& part(SplitPart p) const;

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

std::optional<SplitPart> parse_split_part(std::string_view s);
std::string_view to_string(SplitPart p) noexcept;

/// Integer allocation of `n` items to parts with the given fractions by the
/// largest-remainder method; ties go to the earlier part.
std::array<std::size_t, 3> allocate_largest_remainder(std::size_t n, const SplitFractions& f);

/// Stratified by (alteration x severity). Each stratum is shuffled with a seed
/// derived from (seed, stratum) and cut by allocate_largest_remainder, so every
/// stratum's part sizes are within one item of the exact fractions.
/// With by_subject, whole subjects are allocated instead and strata are ignored.
/// Index lists come back sorted ascending.
SplitAssignment split_manifest(const Manifest& m, const SplitFractions& fractions, std::uint64_t seed,
                               bool by_subject = false);

std::string split_to_json(const SplitAssignment& s);
SplitAssignment split_from_json(std::string_view json);
void save_split(const SplitAssignment& s, const std::filesystem::path& file);
SplitAssignment load_split(const std::filesystem::path& file);

}  // namespace fpx
