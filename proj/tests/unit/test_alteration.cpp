#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fpx/alteration.hpp"
#include "fpx/error.hpp"
#include "fpx/rng.hpp"
#include "test_util.hpp"

namespace fpx {
namespace {

constexpr Alteration kKinds[] = {Alteration::Obliteration, Alteration::CentralRotation, Alteration::ZCut};
constexpr Severity kLevels[] = {Severity::Easy, Severity::Medium, Severity::Hard};

GrayImage print(std::uint64_t seed, int w = 96, int h = 103) {
  return synth_fingerprint(w, h, static_cast<RidgePattern>(seed % 3), seed);
}

AlterationSpec spec_of(Alteration kind, Severity sev, std::uint64_t seed) {
  AlterationSpec s;
  s.kind = kind;
  s.severity = sev;
  s.seed = seed;
  return s;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

// Brute-force dilation of dark pixels by Chebyshev distance 5.
std::vector<bool> oracle_foreground(const GrayImage& img) {
  std::vector<bool> fg(img.pixels().size(), false);
  bool any = false;
  for (auto p : img.pixels()) any = any || p < 128;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      bool hit = !any;
      for (int dy = -5; dy <= 5 && !hit; ++dy) {
        for (int dx = -5; dx <= 5 && !hit; ++dx) {
          hit = img.contains(x + dx, y + dy) && img.at(x + dx, y + dy) < 128;
        }
      }
      fg[static_cast<std::size_t>(y) * img.width() + x] = hit;
    }
  }
  return fg;
}

TEST(Alteration, ForegroundMaskMatchesBruteForce) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto img = print(seed);
    const auto fg = foreground_mask(img);
    const auto want = oracle_foreground(img);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_EQ(fg.bits[i] != 0, want[i]) << i;
  }
  EXPECT_EQ(foreground_mask(GrayImage(16, 16)).area(), 256u);
}

TEST(Alteration, ObliterationIsDeterministic) {
  const auto img = print(5);
  const auto a = obliterate(img, spec_of(Alteration::Obliteration, Severity::Medium, 11));
  const auto b = obliterate(img, spec_of(Alteration::Obliteration, Severity::Medium, 11));
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.spec_resolved, b.spec_resolved);
  EXPECT_NE(obliterate(img, spec_of(Alteration::Obliteration, Severity::Medium, 12)).mask, a.mask);
}

TEST(Alteration, ObliterationPaintedFractionWithinSeverityBand) {
  for (Severity sev : kLevels) {
    const auto [lo, hi] = obliteration_fraction_range(sev);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto img = print(seed);
      const auto r = obliterate(img, spec_of(Alteration::Obliteration, sev, seed));
      const auto fg = oracle_foreground(img);
      std::size_t fg_total = 0, painted = 0;
      for (std::size_t i = 0; i < fg.size(); ++i) {
        fg_total += fg[i];
        painted += fg[i] && r.mask.bits[i];
      }
      const double frac = static_cast<double>(painted) / static_cast<double>(fg_total);
      EXPECT_GE(frac, lo) << to_string(sev) << " seed " << seed;
      EXPECT_LE(frac, hi) << to_string(sev) << " seed " << seed;
      for (std::size_t i = 0; i < fg.size(); ++i) {
        if (r.mask.bits[i]) EXPECT_GE(r.image.pixels()[i], 255 - kObliterationNoise);
      }
    }
  }
}

TEST(Alteration, ObliterationRejectsBadSpecs) {
  const auto img = print(1);
  auto s = spec_of(Alteration::Obliteration, Severity::Easy, 1);
  s.magnitude = 0.6;
  EXPECT_EQ(code_of([&] { obliterate(img, s); }), ErrorCode::InvalidSpec);
  s.magnitude = 0.0;
  EXPECT_EQ(code_of([&] { obliterate(img, s); }), ErrorCode::InvalidSpec);
  EXPECT_EQ(code_of([&] { obliterate(img, spec_of(Alteration::ZCut, Severity::Easy, 1)); }), ErrorCode::InvalidSpec);
  EXPECT_EQ(code_of([&] { alter(img, spec_of(Alteration::Real, Severity::Easy, 1)); }), ErrorCode::InvalidSpec);
  EXPECT_EQ(code_of([&] { alter(img, spec_of(Alteration::ZCut, Severity::None, 1)); }), ErrorCode::InvalidSpec);
}

TEST(Alteration, RotationByHalfTurnTwiceIsIdentity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = test::random_image(96, 103, seed);
    auto s = spec_of(Alteration::CentralRotation, kLevels[seed % 3], seed);
    s.magnitude = 180.0;
    const auto once = central_rotate(img, s);
    EXPECT_NE(once.image, img);
    EXPECT_EQ(central_rotate(once.image, s).image, img) << seed;
  }
}

TEST(Alteration, RotationLeavesOutsideDiskUntouched) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto img = test::random_image(96, 103, 100 + trial);
    auto s = spec_of(Alteration::CentralRotation, kLevels[trial % 3], rng.next_u64());
    s.magnitude = rng.uniform(1.0, 180.0);
    s.bilinear_rotation = trial % 2 == 0;
    const auto r = central_rotate(img, s);
    const int radius = static_cast<int>(std::lround(rotation_radius_fraction(s.severity) * 96));
    const auto c = *r.spec_resolved.center;
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        const bool inside = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y) <= radius * radius;
        EXPECT_EQ(r.mask.at(x, y) != 0, inside);
        if (!inside) ASSERT_EQ(r.image.at(x, y), img.at(x, y));
      }
    }
  }
}

TEST(Alteration, RotationQuarterTurnMapsGridExactly) {
  const auto img = test::random_image(64, 64, 9);
  auto s = spec_of(Alteration::CentralRotation, Severity::Medium, 1);
  s.magnitude = 90.0;
  s.center = PixelPoint{32, 32};
  const auto r = central_rotate(img, s);
  // Destination offset (dx, dy) samples the source at the offset rotated by -90 degrees.
  for (int dy = -10; dy <= 10; ++dy) {
    for (int dx = -10; dx <= 10; ++dx) {
      if (dx * dx + dy * dy > 100) continue;
      EXPECT_EQ(r.image.at(32 + dx, 32 + dy), img.at(32 + dy, 32 - dx));
    }
  }
}

TEST(Alteration, RotationRejectsBadAnglesAndBounds) {
  const auto img = print(1);
  auto s = spec_of(Alteration::CentralRotation, Severity::Hard, 1);
  s.magnitude = 360.0;
  EXPECT_EQ(code_of([&] { central_rotate(img, s); }), ErrorCode::InvalidSpec);
  s.magnitude = 0.0;
  EXPECT_EQ(code_of([&] { central_rotate(img, s); }), ErrorCode::InvalidSpec);
  s.magnitude.reset();
  s.center = PixelPoint{3, 50};
  EXPECT_EQ(code_of([&] { central_rotate(img, s); }), ErrorCode::DiskOutOfBounds);
}

TEST(Alteration, ZCutTwiceWithoutSeamIsIdentity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = test::random_image(96, 103, seed);
    auto s = spec_of(Alteration::ZCut, kLevels[seed % 3], seed);
    s.zcut_seam = false;
    const auto once = z_cut(img, s);
    EXPECT_NE(once.image, img);
    EXPECT_EQ(z_cut(once.image, s).image, img) << seed;
  }
}

TEST(Alteration, ZCutReflectsThroughCenter) {
  const auto img = test::random_image(40, 40, 4);
  auto s = spec_of(Alteration::ZCut, Severity::Easy, 1);
  s.center = PixelPoint{20, 20};
  s.magnitude = 6.0;
  s.zcut_seam = false;
  const auto r = z_cut(img, s);
  EXPECT_EQ(r.image.at(21, 21), img.at(19, 19));
  EXPECT_EQ(r.image.at(19, 19), img.at(21, 21));
  // anti-diagonal pixels stay
  EXPECT_EQ(r.image.at(22, 18), img.at(22, 18));
  EXPECT_EQ(r.mask.area(), 13u * 13u);
}

TEST(Alteration, ZCutBruteForceOnGradientPatch) {
  // 11x11 image holding a strictly increasing gradient, square of half-size 4
  // around (5, 5): swap every open-triangle pixel with its reflection.
  std::vector<std::uint8_t> px(121);
  for (int i = 0; i < 121; ++i) px[i] = static_cast<std::uint8_t>(2 * i);
  const GrayImage img(11, 11, px);
  auto s = spec_of(Alteration::ZCut, Severity::Easy, 1);
  s.center = PixelPoint{5, 5};
  s.magnitude = 4.0;
  s.zcut_seam = false;
  const auto r = z_cut(img, s);
  int changed = 0;
  for (int y = 0; y < 11; ++y) {
    for (int x = 0; x < 11; ++x) {
      const int dx = x - 5, dy = y - 5;
      const bool swapped = std::abs(dx) < 4 && std::abs(dy) < 4 && dx + dy != 0;
      const auto want = swapped ? img.at(5 - dx, 5 - dy) : img.at(x, y);
      EXPECT_EQ(r.image.at(x, y), want) << x << "," << y;
      changed += r.image.at(x, y) != img.at(x, y);
    }
  }
  // 7x7 interior minus its 7-pixel anti-diagonal
  EXPECT_EQ(changed, 42);

  // seam: top edge, bottom edge and anti-diagonal darkened by 40 (floor 0)
  s.zcut_seam = true;
  const auto seamed = z_cut(img, s);
  for (int dx = -4; dx <= 4; ++dx) {
    EXPECT_EQ(seamed.image.at(5 + dx, 1), std::max(0, img.at(5 + dx, 1) - 40));
    EXPECT_EQ(seamed.image.at(5 + dx, 9), std::max(0, img.at(5 + dx, 9) - 40));
    EXPECT_EQ(seamed.image.at(5 + dx, 5 - dx), std::max(0, img.at(5 + dx, 5 - dx) - 40));
  }
  EXPECT_EQ(seamed.image.at(1, 5), img.at(1, 5));  // left edge is not a seam
}

TEST(Alteration, ZCutRejectsBadSpecs) {
  const auto img = print(1);
  auto s = spec_of(Alteration::ZCut, Severity::Medium, 1);
  s.magnitude = 3.0;
  EXPECT_EQ(code_of([&] { z_cut(img, s); }), ErrorCode::InvalidSpec);
  s.magnitude = 5.5;
  EXPECT_EQ(code_of([&] { z_cut(img, s); }), ErrorCode::InvalidSpec);
  s.magnitude.reset();
  s.center = PixelPoint{90, 50};
  EXPECT_EQ(code_of([&] { z_cut(img, s); }), ErrorCode::SquareOutOfBounds);
}

TEST(Alteration, TinyImageHardZCutOffCenterIsOutOfBounds) {
  // s = round(0.30 * 16) = 5: a square of side 11 fits only for centers 5..10.
  const GrayImage img(16, 16, 0);
  auto s = spec_of(Alteration::ZCut, Severity::Hard, 1);
  EXPECT_NO_THROW(z_cut(img, s));
  s.center = PixelPoint{12, 8};
  EXPECT_EQ(code_of([&] { z_cut(img, s); }), ErrorCode::SquareOutOfBounds);
}

TEST(Alteration, NoPixelChangesOutsideMask) {
  Rng rng(77);
  for (Alteration kind : kKinds) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto img = trial % 2 ? print(rng.next_u64()) : test::random_image(96, 103, rng.next_u64());
      auto s = spec_of(kind, kLevels[rng.uniform_int(0, 2)], rng.next_u64());
      s.bilinear_rotation = rng.uniform() < 0.3;
      s.zcut_seam = rng.uniform() < 0.7;
      const auto r = alter(img, s);
      ASSERT_GT(r.mask.area(), 0u);
      for (std::size_t i = 0; i < r.mask.bits.size(); ++i) {
        if (!r.mask.bits[i]) ASSERT_EQ(r.image.pixels()[i], img.pixels()[i]) << to_string(kind) << " " << trial;
      }
      EXPECT_TRUE(r.spec_resolved.center.has_value());
      EXPECT_TRUE(r.spec_resolved.magnitude.has_value());
    }
  }
}

TEST(Alteration, MeanMaskAreaIncreasesWithSeverity) {
  for (Alteration kind : kKinds) {
    double prev = 0.0;
    for (Severity sev : kLevels) {
      double sum = 0.0;
      for (std::uint64_t seed = 0; seed < 50; ++seed) {
        sum += static_cast<double>(alter(print(seed), spec_of(kind, sev, seed)).mask.area());
      }
      const double mean = sum / 50.0;
      EXPECT_GT(mean, prev) << to_string(kind) << " " << to_string(sev);
      prev = mean;
    }
  }
}

TEST(Alteration, SynthPrintShapeAndDeterminism) {
  const auto a = synth_fingerprint(96, 103, RidgePattern::Concentric, 1);
  EXPECT_EQ(a.width(), 96);
  EXPECT_EQ(a.height(), 103);
  EXPECT_EQ(a, synth_fingerprint(96, 103, RidgePattern::Concentric, 1));
  EXPECT_NE(a, synth_fingerprint(96, 103, RidgePattern::Concentric, 2));
  EXPECT_THROW(synth_fingerprint(31, 64, RidgePattern::Loop, 1), Error);
}

TEST(Alteration, SynthDarkFractionInsideEllipse) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto pattern = static_cast<RidgePattern>(seed % 3);
    const auto img = synth_fingerprint(96, 103, pattern, seed);
    std::size_t inside = 0, dark = 0;
    for (int y = 0; y < 103; ++y) {
      for (int x = 0; x < 96; ++x) {
        const double nx = (x + 0.5 - 48.0) / 48.0;
        const double ny = (y + 0.5 - 51.5) / 51.5;
        if (nx * nx + ny * ny > 1.0) {
          EXPECT_EQ(img.at(x, y), 255);
          continue;
        }
        ++inside;
        dark += img.at(x, y) < 128;
      }
    }
    const double frac = static_cast<double>(dark) / static_cast<double>(inside);
    EXPECT_GE(frac, 0.3) << seed;
    EXPECT_LE(frac, 0.7) << seed;
  }
}

TEST(Alteration, SynthDatasetLayoutAndReproducibility) {
  test::TempDir a, b;
  const auto m = make_synth_dataset(10, a.path(), 5);
  ASSERT_EQ(m.size(), 1000u);
  std::size_t real = 0;
  std::set<std::string> paths;
  for (const auto& e : m.entries) {
    paths.insert(e.path);
    EXPECT_TRUE(e.label.consistent());
    if (e.label.alteration == Alteration::Real) {
      ++real;
      EXPECT_TRUE(e.mask_path.empty());
      continue;
    }
    const auto mask = load_mask(m.root / e.mask_path);
    EXPECT_GT(mask.area(), 0u) << e.mask_path;
    EXPECT_EQ(parse_socofing_name(e.path), e.label);
  }
  EXPECT_EQ(real, 100u);
  EXPECT_EQ(paths.size(), 1000u);

  const auto m2 = make_synth_dataset(10, b.path(), 5);
  EXPECT_EQ(read_file(a / "manifest.json"), read_file(b / "manifest.json"));
  for (std::size_t i = 0; i < m.size(); i += 37) {
    EXPECT_EQ(read_file(m.resolve(m.entries[i])), read_file(m2.resolve(m2.entries[i])));
  }
  const auto loaded = load_manifest(a / "manifest.json");
  EXPECT_EQ(loaded.entries, m.entries);
}

TEST(Alteration, SynthLabelsShapePrints) {
  // Female prints use the shorter ridge period, so more dark/light transitions per row.
  auto transitions = [](const GrayImage& img) {
    int t = 0;
    for (int y = 30; y < 70; ++y) {
      for (int x = 20; x < 75; ++x) t += (img.at(x, y) < 128) != (img.at(x + 1, y) < 128);
    }
    return t;
  };
  double male = 0, female = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthStyle st{RidgePattern::Concentric, 8.0, 10.0, 0.0};
    male += transitions(synth_fingerprint(96, 103, st, seed));
    st.min_period = 6.0;
    st.max_period = 8.0;
    female += transitions(synth_fingerprint(96, 103, st, seed));
  }
  EXPECT_GT(female, male * 1.1);
}

}  // namespace
}  // namespace fpx
