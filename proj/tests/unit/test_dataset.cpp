#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "fpx/dataset.hpp"
#include "fpx/error.hpp"
#include "fpx/rng.hpp"
#include "test_util.hpp"

namespace fpx {
namespace {

// Independent largest-remainder allocation: floors, then leftover units to the
// largest fractional parts, earlier part first on ties.
std::array<std::size_t, 3> oracle_allocate(std::size_t n, std::array<double, 3> f) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double q = static_cast<double>(n) * f[i];
    out[i] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[i] = q - static_cast<double>(out[i]);
    used += out[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++out[order[k % 3]];
  return out;
}

RecordLabel real_label(int id, Gender g, Hand h, Finger f) {
  return {static_cast<std::uint32_t>(id), g, h, f, Alteration::Real, Severity::None};
}

Manifest synthetic_manifest(const std::map<std::pair<Alteration, Severity>, int>& strata) {
  Manifest m;
  int k = 0;
  for (const auto& [key, count] : strata) {
    for (int i = 0; i < count; ++i, ++k) {
      RecordLabel l{static_cast<std::uint32_t>(1 + k % 37), Gender::Male, Hand::Left, Finger::Index, key.first, key.second};
      m.entries.push_back({"img" + std::to_string(100000 + k) + ".bmp", l, {}});
    }
  }
  return m;
}

TEST(Dataset, ParsesRealName) {
  const auto l = parse_socofing_name("1__M_Left_index_finger.BMP");
  EXPECT_EQ(l.subject_id, 1u);
  EXPECT_EQ(l.gender, Gender::Male);
  EXPECT_EQ(l.hand, Hand::Left);
  EXPECT_EQ(l.finger, Finger::Index);
  EXPECT_EQ(l.alteration, Alteration::Real);
  EXPECT_EQ(l.severity, Severity::None);
}

TEST(Dataset, ParsesAlteredNameWithSeverityDirectory) {
  const auto l = parse_socofing_name("Altered-Hard/37__F_Right_thumb_finger_Zcut.BMP");
  EXPECT_EQ(l, (RecordLabel{37, Gender::Female, Hand::Right, Finger::Thumb, Alteration::ZCut, Severity::Hard}));
  EXPECT_EQ(parse_socofing_name("Altered/Easy/5__M_Left_little_finger_CR.bmp").severity, Severity::Easy);
  EXPECT_EQ(parse_socofing_name("Medium/5__M_Left_little_finger_Obl.bmp").alteration, Alteration::Obliteration);
}

TEST(Dataset, MalformedNames) {
  for (const char* bad : {"oops.BMP", "1__X_Left_index_finger.BMP", "1__M_Left_toe_finger.BMP",
                          "0__M_Left_index_finger.BMP", "1__M_Left_index_finger_Foo.BMP", "1__M_Left_index.BMP",
                          "1__M_Left_index_finger.png",
                          // altered files must carry a severity directory
                          "1__M_Left_index_finger_Obl.BMP"}) {
    try {
      parse_socofing_name(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::MalformedName) << bad;
    }
  }
}

TEST(Dataset, RenderParseIsAFixpoint) {
  for (int id : {1, 42, 600}) {
    for (Gender g : kGenders) {
      for (Hand h : kHands) {
        for (Finger f : kFingers) {
          for (Alteration a : kAlterations) {
            for (Severity s : kSeverities) {
              const RecordLabel l{static_cast<std::uint32_t>(id), g, h, f, a, s};
              if (!l.consistent()) continue;
              EXPECT_EQ(parse_socofing_name(render_socofing_name(l)), l);
            }
          }
        }
      }
    }
  }
}

TEST(Dataset, BuildManifestReportsSkips) {
  test::TempDir dir;
  const GrayImage img(96, 103);
  std::filesystem::create_directories(dir / "Altered-Hard");
  save_bmp(img, dir / "1__M_Left_index_finger.BMP");
  save_bmp(img, dir / "Altered-Hard/37__F_Right_thumb_finger_Zcut.BMP");
  save_bmp(img, dir / "oops.BMP");
  const auto r = build_manifest(dir.path(), ManifestScheme::Socofing);
  ASSERT_EQ(r.manifest.size(), 2u);
  ASSERT_EQ(r.skipped.size(), 1u);
  EXPECT_EQ(r.skipped[0].path, "oops.BMP");
  EXPECT_EQ(r.manifest.entries[0].path, "1__M_Left_index_finger.BMP");
  EXPECT_EQ(r.manifest.entries[1].path, "Altered-Hard/37__F_Right_thumb_finger_Zcut.BMP");
  EXPECT_EQ(manifest_to_json(build_manifest(dir.path(), ManifestScheme::Socofing).manifest),
            manifest_to_json(r.manifest));
  EXPECT_EQ(load_image(r.manifest.resolve(r.manifest.entries[0])).width(), 96);
}

TEST(Dataset, EmptyDirectoryIsEmptyDataset) {
  test::TempDir dir;
  try {
    build_manifest(dir.path(), ManifestScheme::Socofing);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Dataset, ManifestFileRoundTripRebasesPaths) {
  test::TempDir dir;
  std::filesystem::create_directories(dir / "data/Real");
  save_bmp(GrayImage(16, 16), dir / "data/Real/3__F_Left_ring_finger.BMP");
  const auto m = build_manifest(dir / "data", ManifestScheme::Socofing).manifest;
  save_manifest(m, dir / "out/manifest.json");
  const auto back = load_manifest(dir / "out/manifest.json");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back.entries[0].label, m.entries[0].label);
  EXPECT_EQ(back.entries[0].path, "../data/Real/3__F_Left_ring_finger.BMP");
  EXPECT_EQ(load_image(back.resolve(back.entries[0])).width(), 16);
}

TEST(Dataset, LargestRemainderMatchesOracle) {
  const std::array<double, 3> f{0.5, 0.2, 0.3};
  for (std::size_t n = 0; n < 500; ++n) {
    const auto got = allocate_largest_remainder(n, {0.5, 0.2, 0.3});
    const auto want = oracle_allocate(n, f);
    EXPECT_EQ(got, want) << n;
    EXPECT_EQ(got[0] + got[1] + got[2], n);
  }
  EXPECT_EQ(allocate_largest_remainder(10, {}), (std::array<std::size_t, 3>{5, 2, 3}));
}

TEST(Dataset, PublishedStratumSizesTrainTotal) {
  // Obl, CR, Z-cut and Real counts of the full dataset.
  std::size_t total = 0;
  for (std::size_t n : {17866u, 16388u, 14978u, 6000u}) total += oracle_allocate(n, {0.5, 0.2, 0.3})[0];
  EXPECT_EQ(total, 27616u);
  std::size_t got = 0;
  for (std::size_t n : {17866u, 16388u, 14978u, 6000u}) got += allocate_largest_remainder(n, {})[0];
  EXPECT_EQ(got, total);
}

TEST(Dataset, TenRealEntriesSplitFiveTwoThree) {
  const auto m = synthetic_manifest({{{Alteration::Real, Severity::None}, 10}});
  const auto s = split_manifest(m, {}, 7);
  EXPECT_EQ(s.train.size(), 5u);
  EXPECT_EQ(s.validation.size(), 2u);
  EXPECT_EQ(s.test.size(), 3u);
  EXPECT_EQ(s.seed, 7u);
  EXPECT_EQ(split_manifest(m, {}, 7), s);
}

TEST(Dataset, SplitPropertiesOverRandomManifests) {
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    std::map<std::pair<Alteration, Severity>, int> strata;
    strata[{Alteration::Real, Severity::None}] = static_cast<int>(rng.uniform_int(3, 60));
    for (Alteration a : {Alteration::Obliteration, Alteration::CentralRotation, Alteration::ZCut}) {
      for (Severity s : {Severity::Easy, Severity::Medium, Severity::Hard}) {
        if (rng.uniform() < 0.7) strata[{a, s}] = static_cast<int>(rng.uniform_int(3, 80));
      }
    }
    const auto m = synthetic_manifest(strata);
    const auto seed = rng.next_u64();
    const auto s = split_manifest(m, {}, seed);
    EXPECT_EQ(split_manifest(m, {}, seed), s);

    std::vector<int> seen(m.size(), 0);
    for (SplitPart p : {SplitPart::Train, SplitPart::Validation, SplitPart::Test}) {
      EXPECT_TRUE(std::is_sorted(s.part(p).begin(), s.part(p).end()));
      for (auto i : s.part(p)) ++seen.at(i);
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));

    for (const auto& [key, count] : strata) {
      const std::array<double, 3> frac{0.5, 0.2, 0.3};
      int p = 0;
      for (SplitPart part : {SplitPart::Train, SplitPart::Validation, SplitPart::Test}) {
        const auto in = std::count_if(s.part(part).begin(), s.part(part).end(), [&, k = key](std::size_t i) {
          return m.entries[i].label.alteration == k.first && m.entries[i].label.severity == k.second;
        });
        EXPECT_LE(std::abs(static_cast<double>(in) / count - frac[p]), 1.0 / count + 1e-12);
        ++p;
      }
    }
  }
}

TEST(Dataset, DegenerateStratum) {
  const auto m = synthetic_manifest({{{Alteration::Real, Severity::None}, 10}, {{Alteration::ZCut, Severity::Easy}, 2}});
  try {
    split_manifest(m, {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateStratum);
  }
}

TEST(Dataset, BySubjectKeepsSubjectsTogether) {
  Manifest m;
  for (int subject = 1; subject <= 20; ++subject) {
    for (Finger f : kFingers) {
      const auto l = real_label(subject, Gender::Female, Hand::Right, f);
      m.entries.push_back({render_socofing_name(l), l, {}});
    }
  }
  std::sort(m.entries.begin(), m.entries.end(), [](auto& a, auto& b) { return a.path < b.path; });
  const auto s = split_manifest(m, {}, 3, true);
  std::map<int, std::set<int>> parts_of_subject;
  int p = 0;
  for (SplitPart part : {SplitPart::Train, SplitPart::Validation, SplitPart::Test}) {
    for (auto i : s.part(part)) parts_of_subject[static_cast<int>(m.entries[i].label.subject_id)].insert(p);
    ++p;
  }
  for (const auto& [subject, parts] : parts_of_subject) EXPECT_EQ(parts.size(), 1u) << subject;
  EXPECT_EQ(s.train.size(), 50u);
  EXPECT_EQ(s.validation.size(), 20u);
  EXPECT_EQ(s.test.size(), 30u);
}

TEST(Dataset, SplitJsonRoundTrip) {
  SplitAssignment s;
  s.train = {0, 3, 4};
  s.validation = {1};
  s.test = {2, 5};
  s.seed = 0xFFFFFFFFFFFFFFFFULL;
  EXPECT_EQ(split_from_json(split_to_json(s)), s);
  EXPECT_NE(split_to_json(s).find("\"val\""), std::string::npos);
}

TEST(Dataset, FractionsMustSumToOne) {
  const auto m = synthetic_manifest({{{Alteration::Real, Severity::None}, 10}});
  EXPECT_THROW(split_manifest(m, {0.5, 0.2, 0.2}, 1), Error);
}

}  // namespace
}  // namespace fpx
