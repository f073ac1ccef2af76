#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>

#include "fpx/dataset.hpp"
#include "fpx/image.hpp"
#include "fpx/labels.hpp"

namespace fpx {

struct PixelPoint {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

struct AlterationSpec {
  Alteration kind = Alteration::Obliteration;  // never Real
  Severity severity = Severity::Medium;        // Easy, Medium or Hard
  std::uint64_t seed = 0;
  std::optional<PixelPoint> center;  // nullopt = Auto
  // Kind-specific; nullopt = Auto.
  //   CentralRotation: angle in degrees, (0, 180]
  //   ZCut: half-size s in pixels, >= 4
  //   Obliteration: target painted fraction of the foreground, (0, 0.5]
  std::optional<double> magnitude;
  bool zcut_seam = true;          // darken the Z-shaped scar
  bool bilinear_rotation = false;  // nearest-neighbour otherwise

  friend bool operator==(const AlterationSpec&, const AlterationSpec&) = default;
};

struct AlterationResult {
  GrayImage image;
  Mask mask;
  AlterationSpec spec_resolved;  // center and magnitude always set
};

inline constexpr int kZcutSeamDarkening = 40;
inline constexpr int kObliterationNoise = 30;

// Severity-scaled geometry, as a fraction of min(width, height).
double rotation_radius_fraction(Severity s);
double zcut_half_size_fraction(Severity s);
double rotation_default_angle(Severity s);
// Inclusive range of the painted foreground fraction for obliteration.
std::pair<double, double> obliteration_fraction_range(Severity s);

/// Pixels belonging to the print: within Chebyshev distance 5 of a dark
/// (< 128) pixel. A print with no dark pixel is all foreground.
Mask foreground_mask(const GrayImage& img);

AlterationResult obliterate(const GrayImage& src, const AlterationSpec& spec);
AlterationResult central_rotate(const GrayImage& src, const AlterationSpec& spec);
AlterationResult z_cut(const GrayImage& src, const AlterationSpec& spec);
// Dispatches on spec.kind.
AlterationResult alter(const GrayImage& src, const AlterationSpec& spec);

enum class RidgePattern { Concentric, Loop, Whorl };

std::string_view to_string(RidgePattern p) noexcept;

struct SynthStyle {
  RidgePattern pattern = RidgePattern::Concentric;
  double min_period = 6.0;  // ridge wavelength range in pixels
  double max_period = 10.0;
  double slant = 0.0;  // lateral lean of loop/whorl patterns, [-1, 1]
};

/// Procedural ridge pattern: I = 128 + 127 cos(2 pi phi / lambda), binarized at
/// 128, box-blurred 3x3, and faded to 255 outside the inscribed ellipse.
/// phi is distance-to-core (Concentric), a U-shaped arch field (Loop) or an
/// Archimedean spiral (Whorl).
GrayImage synth_fingerprint(int width, int height, RidgePattern pattern, std::uint64_t seed);
GrayImage synth_fingerprint(int width, int height, const SynthStyle& style, std::uint64_t seed);

/// Writes a synthetic SOCOFing-style tree under out_dir: Real/, Altered/Altered-<Sev>/,
/// Masks/Altered-<Sev>/ and an Explicit manifest.json, 10 real prints per subject plus
/// one altered copy per (kind x severity). Labels shape the prints: gender sets the
/// ridge period band, finger the pattern type and hand the slant direction.
Manifest make_synth_dataset(int n_subjects, const std::filesystem::path& out_dir, std::uint64_t seed,
                            int width = GrayImage::kDefaultWidth, int height = GrayImage::kDefaultHeight);

}  // namespace fpx
