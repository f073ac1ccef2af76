#include "fpx/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>

#include <json.hpp>

#include "fpx/error.hpp"
#include "fpx/rng.hpp"

namespace fpx {

using nlohmann::json;

std::string_view to_string(ManifestScheme s) noexcept { return s == ManifestScheme::Socofing ? "socofing" : "explicit"; }

std::optional<ManifestScheme> parse_scheme(std::string_view s) {
  if (s == "socofing" || s == "Socofing") return ManifestScheme::Socofing;
  if (s == "explicit" || s == "Explicit") return ManifestScheme::Explicit;
  return std::nullopt;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string_view> split(std::string_view s, std::string_view sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + sep.size();
  }
}

std::optional<Severity> severity_from_dir(std::string_view dir) {
  const auto dash = dir.rfind('-');
  const auto tail = dash == std::string_view::npos ? dir : dir.substr(dash + 1);
  auto sev = parse_severity(tail);
  if (sev && *sev != Severity::None) return sev;
  return std::nullopt;
}

std::optional<Alteration> alteration_token(std::string_view tok) {
  const auto t = lower(tok);
  if (t == "obl") return Alteration::Obliteration;
  if (t == "cr") return Alteration::CentralRotation;
  if (t == "zcut") return Alteration::ZCut;
  return std::nullopt;
}

std::string_view alteration_suffix(Alteration a) {
  switch (a) {
    case Alteration::Obliteration: return "Obl";
    case Alteration::CentralRotation: return "CR";
    case Alteration::ZCut: return "Zcut";
    case Alteration::Real: break;
  }
  return "";
}

bool has_bmp_extension(std::string_view name) { return name.size() > 4 && lower(name.substr(name.size() - 4)) == ".bmp"; }

}  // namespace

RecordLabel parse_socofing_name(std::string_view relative_path) {
  std::string normalized(relative_path);
  std::replace(normalized.begin(), normalized.end(), '\\', '/');
  auto components = split(normalized, "/");
  const std::string_view base = components.back();
  components.pop_back();
  const std::string where = "'" + std::string(relative_path) + "'";

  check(has_bmp_extension(base), ErrorCode::MalformedName, where + ": expected a .bmp file");
  const auto stem = base.substr(0, base.size() - 4);
  const auto halves = split(stem, "__");
  check(halves.size() == 2, ErrorCode::MalformedName, where + ": expected '<id>__<tokens>'");

  RecordLabel label;
  {
    const auto id = halves[0];
    std::uint32_t value = 0;
    const auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), value);
    check(ec == std::errc() && ptr == id.data() + id.size() && value > 0, ErrorCode::MalformedName,
          where + ": subject id must be a positive integer");
    label.subject_id = value;
  }

  const auto tokens = split(halves[1], "_");
  check(tokens.size() == 4 || tokens.size() == 5, ErrorCode::MalformedName,
        where + ": expected <M|F>_<Left|Right>_<finger>_finger[_<Obl|CR|Zcut>]");
  const auto g = lower(tokens[0]);
  check(g == "m" || g == "f", ErrorCode::MalformedName, where + ": gender token must be M or F");
  label.gender = g == "m" ? Gender::Male : Gender::Female;

  const auto hand = parse_hand(tokens[1]);
  check(hand.has_value(), ErrorCode::MalformedName, where + ": unknown hand token");
  label.hand = *hand;
  const auto finger = parse_finger(tokens[2]);
  check(finger.has_value(), ErrorCode::MalformedName, where + ": unknown finger token");
  label.finger = *finger;
  check(lower(tokens[3]) == "finger", ErrorCode::MalformedName, where + ": missing 'finger' token");

  if (tokens.size() == 5) {
    const auto alt = alteration_token(tokens[4]);
    check(alt.has_value(), ErrorCode::MalformedName, where + ": unknown alteration token");
    label.alteration = *alt;
    for (auto it = components.rbegin(); it != components.rend(); ++it) {
      if (auto sev = severity_from_dir(*it)) {
        label.severity = *sev;
        break;
      }
    }
    check(label.severity != Severity::None, ErrorCode::MalformedName,
          where + ": altered file outside an Easy/Medium/Hard directory");
  }
  return label;
}

std::string render_socofing_name(const RecordLabel& label) {
  std::string name = std::to_string(label.subject_id) + "__" + (label.gender == Gender::Male ? "M" : "F") + "_" +
                     std::string(to_string(label.hand)) + "_" + lower(to_string(label.finger)) + "_finger";
  if (label.alteration == Alteration::Real) return "Real/" + name + ".BMP";
  return "Altered/Altered-" + std::string(to_string(label.severity)) + "/" + name + "_" +
         std::string(alteration_suffix(label.alteration)) + ".BMP";
}

namespace {

json entry_to_json(const ManifestEntry& e) {
  json j{{"path", e.path},
         {"subject_id", e.label.subject_id},
         {"gender", to_string(e.label.gender)},
         {"hand", to_string(e.label.hand)},
         {"finger", to_string(e.label.finger)},
         {"alteration", to_string(e.label.alteration)},
         {"severity", to_string(e.label.severity)}};
  if (!e.mask_path.empty()) j["mask"] = e.mask_path;
  return j;
}

template <class T>
T required_enum(const json& j, const char* key, std::optional<T> (*parse)(std::string_view)) {
  check(j.contains(key) && j[key].is_string(), ErrorCode::DecodeError, std::string("manifest entry lacks '") + key + "'");
  auto v = parse(j[key].get<std::string>());
  check(v.has_value(), ErrorCode::UnknownLabel, std::string("bad value for '") + key + "': " + j[key].get<std::string>());
  return *v;
}

ManifestEntry entry_from_json(const json& j) {
  check(j.is_object(), ErrorCode::DecodeError, "manifest entry is not an object");
  check(j.contains("path") && j["path"].is_string(), ErrorCode::DecodeError, "manifest entry lacks 'path'");
  check(j.contains("subject_id") && j["subject_id"].is_number_unsigned() && j["subject_id"].get<std::uint64_t>() > 0,
        ErrorCode::DecodeError, "manifest entry lacks a positive 'subject_id'");
  ManifestEntry e;
  e.path = j["path"].get<std::string>();
  e.label.subject_id = j["subject_id"].get<std::uint32_t>();
  e.label.gender = required_enum(j, "gender", &parse_gender);
  e.label.hand = required_enum(j, "hand", &parse_hand);
  e.label.finger = required_enum(j, "finger", &parse_finger);
  e.label.alteration = required_enum(j, "alteration", &parse_alteration);
  e.label.severity = required_enum(j, "severity", &parse_severity);
  if (j.contains("mask")) e.mask_path = j["mask"].get<std::string>();
  check(e.label.consistent(), ErrorCode::DecodeError, "entry '" + e.path + "': severity must be None iff Real");
  return e;
}

void sort_and_dedupe(Manifest& m) {
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  const auto dup = std::adjacent_find(m.entries.begin(), m.entries.end(),
                                      [](const auto& a, const auto& b) { return a.path == b.path; });
  check(dup == m.entries.end(), ErrorCode::DecodeError, "duplicate manifest path '" + (dup == m.entries.end() ? "" : dup->path) + "'");
}

}  // namespace

std::string manifest_to_json(const Manifest& m) {
  json arr = json::array();
  for (const auto& e : m.entries) arr.push_back(entry_to_json(e));
  return arr.dump(2) + "\n";
}

Manifest manifest_from_json(std::string_view text, const std::filesystem::path& root) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::exception& ex) {
    fail(ErrorCode::DecodeError, std::string("manifest JSON: ") + ex.what());
  }
  check(arr.is_array(), ErrorCode::DecodeError, "manifest must be a JSON array");
  Manifest m;
  m.root = root;
  m.scheme = ManifestScheme::Explicit;
  for (const auto& j : arr) m.entries.push_back(entry_from_json(j));
  sort_and_dedupe(m);
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& file) {
  namespace fs = std::filesystem;
  // Stored paths are relative to the file's directory, wherever the root is.
  const auto base = fs::absolute(file.parent_path().empty() ? fs::path(".") : file.parent_path()).lexically_normal();
  const auto root = fs::absolute(m.root).lexically_normal();
  Manifest rebased = m;
  if (root != base) {
    auto rebase = [&](std::string& p) {
      if (!p.empty()) p = (root / p).lexically_normal().lexically_relative(base).generic_string();
    };
    for (auto& e : rebased.entries) {
      rebase(e.path);
      rebase(e.mask_path);
    }
  }
  const auto text = manifest_to_json(rebased);
  write_file(file, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Manifest load_manifest(const std::filesystem::path& file) {
  const auto bytes = read_file(file);
  auto dir = file.parent_path();
  if (dir.empty()) dir = ".";
  return manifest_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), dir);
}

BuildResult build_manifest(const std::filesystem::path& root, ManifestScheme scheme) {
  namespace fs = std::filesystem;
  std::error_code ec;
  check(fs::is_directory(root, ec), ErrorCode::IoError, "not a readable directory: " + root.string());

  BuildResult result;
  result.manifest.root = root;
  result.manifest.scheme = scheme;

  if (scheme == ManifestScheme::Socofing) {
    std::vector<std::string> files;
    for (auto it = fs::recursive_directory_iterator(root, ec); !ec && it != fs::recursive_directory_iterator();
         it.increment(ec)) {
      if (!it->is_regular_file()) continue;
      const auto rel = fs::relative(it->path(), root).generic_string();
      if (!has_bmp_extension(it->path().filename().string())) continue;
      files.push_back(rel);
    }
    check(!ec, ErrorCode::IoError, "directory walk failed: " + ec.message());
    std::sort(files.begin(), files.end());
    for (const auto& rel : files) {
      try {
        result.manifest.entries.push_back({rel, parse_socofing_name(rel), {}});
      } catch (const Error& err) {
        result.skipped.push_back({rel, err.what()});
      }
    }
  } else {
    const auto listed = load_manifest(root / "manifest.json");
    for (const auto& e : listed.entries) {
      if (fs::is_regular_file(root / e.path, ec)) {
        result.manifest.entries.push_back(e);
      } else {
        result.skipped.push_back({e.path, "file not found"});
      }
    }
  }
  sort_and_dedupe(result.manifest);
  check(!result.manifest.entries.empty(), ErrorCode::EmptyDataset, "no parseable images under " + root.string());
  return result;
}

const std::vector<std::size_t>& SplitAssignment::part(SplitPart p) const {
  switch (p) {
    case SplitPart::Train: return train;
    case SplitPart::Validation: return validation;
    case SplitPart::Test: break;
  }
  return test;
}

std::optional<SplitPart> parse_split_part(std::string_view s) {
  if (s == "train") return SplitPart::Train;
  if (s == "val" || s == "validation") return SplitPart::Validation;
  if (s == "test") return SplitPart::Test;
  return std::nullopt;
}

std::string_view to_string(SplitPart p) noexcept {
  switch (p) {
    case SplitPart::Train: return "train";
    case SplitPart::Validation: return "val";
    case SplitPart::Test: break;
  }
  return "test";
}

std::array<std::size_t, 3> allocate_largest_remainder(std::size_t n, const SplitFractions& f) {
  const std::array<double, 3> frac{f.train, f.validation, f.test};
  std::array<std::size_t, 3> count{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * frac[i];
    count[i] = static_cast<std::size_t>(quota + 1e-9);
    rem[i] = quota - static_cast<double>(count[i]);
    assigned += count[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++count[order[k % 3]];
  return count;
}

SplitAssignment split_manifest(const Manifest& m, const SplitFractions& f, std::uint64_t seed, bool by_subject) {
  check(f.train >= 0 && f.validation >= 0 && f.test >= 0 && std::abs(f.train + f.validation + f.test - 1.0) <= 1e-9,
        ErrorCode::InvalidArgument, "split fractions must be nonnegative and sum to 1");
  check(!m.entries.empty(), ErrorCode::EmptyDataset, "cannot split an empty manifest");
  const std::size_t nonzero_parts = (f.train > 0) + (f.validation > 0) + (f.test > 0);

  SplitAssignment out;
  out.seed = seed;
  auto distribute = [&](std::vector<std::size_t> group_members, const std::vector<std::vector<std::size_t>>& groups,
                        std::uint64_t stream) {
    Rng rng(derive_seed(seed, stream));
    rng.shuffle(group_members);
    const auto counts = allocate_largest_remainder(group_members.size(), f);
    std::size_t k = 0;
    for (std::size_t part = 0; part < 3; ++part) {
      auto& dst = part == 0 ? out.train : part == 1 ? out.validation : out.test;
      for (std::size_t c = 0; c < counts[part]; ++c, ++k) {
        const auto& members = groups[group_members[k]];
        dst.insert(dst.end(), members.begin(), members.end());
      }
    }
  };

  if (by_subject) {
    std::map<std::uint32_t, std::vector<std::size_t>> subjects;
    for (std::size_t i = 0; i < m.entries.size(); ++i) subjects[m.entries[i].label.subject_id].push_back(i);
    check(subjects.size() >= nonzero_parts, ErrorCode::DegenerateStratum,
          "fewer subjects than nonzero split parts");
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [id, members] : subjects) groups.push_back(std::move(members));
    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    distribute(std::move(order), groups, 0xB5);
  } else {
    std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      const auto& l = m.entries[i].label;
      strata[{static_cast<int>(l.alteration), static_cast<int>(l.severity)}].push_back(i);
    }
    for (const auto& [key, members] : strata) {
      check(members.size() >= nonzero_parts, ErrorCode::DegenerateStratum,
            "stratum " + std::string(to_string(static_cast<Alteration>(key.first))) + "/" +
                std::string(to_string(static_cast<Severity>(key.second))) + " has " + std::to_string(members.size()) +
                " entries for " + std::to_string(nonzero_parts) + " split parts");
      std::vector<std::vector<std::size_t>> singletons;
      singletons.reserve(members.size());
      for (auto idx : members) singletons.push_back({idx});
      std::vector<std::size_t> order(members.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      distribute(std::move(order), singletons, static_cast<std::uint64_t>(key.first * 4 + key.second));
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::string split_to_json(const SplitAssignment& s) {
  json j{{"seed", s.seed}, {"train", s.train}, {"val", s.validation}, {"test", s.test}};
  return j.dump() + "\n";
}

SplitAssignment split_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    SplitAssignment s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<std::size_t>>();
    s.validation = j.at("val").get<std::vector<std::size_t>>();
    s.test = j.at("test").get<std::vector<std::size_t>>();
    return s;
  } catch (const json::exception& ex) {
    fail(ErrorCode::DecodeError, std::string("split JSON: ") + ex.what());
  }
}

void save_split(const SplitAssignment& s, const std::filesystem::path& file) {
  const auto text = split_to_json(s);
  write_file(file, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

SplitAssignment load_split(const std::filesystem::path& file) {
  const auto bytes = read_file(file);
  return split_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace fpx
