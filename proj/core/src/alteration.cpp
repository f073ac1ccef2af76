#include "fpx/alteration.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fpx/error.hpp"
#include "fpx/rng.hpp"

namespace fpx {

namespace {

constexpr double kPi = std::numbers::pi;

int severity_rank(Severity s) {
  check(s != Severity::None, ErrorCode::InvalidSpec, "alterations need an Easy, Medium or Hard severity");
  return static_cast<int>(s) - 1;
}

void require_kind(const AlterationSpec& spec, Alteration kind) {
  check(spec.kind == kind, ErrorCode::InvalidSpec,
        "expected a " + std::string(to_string(kind)) + " spec, got " + std::string(to_string(spec.kind)));
  severity_rank(spec.severity);
}

// Draws the Auto center uniformly from the central 40% x 40% box, restricted to
// centers whose `margin`-sized neighbourhood stays inside the image.
PixelPoint resolve_center(const GrayImage& src, const AlterationSpec& spec, int margin, Rng& rng,
                          ErrorCode out_of_bounds) {
  const int w = src.width();
  const int h = src.height();
  if (spec.center) {
    const auto c = *spec.center;
    check(c.x - margin >= 0 && c.y - margin >= 0 && c.x + margin <= w - 1 && c.y + margin <= h - 1, out_of_bounds,
          "region of half-size " + std::to_string(margin) + " around (" + std::to_string(c.x) + ", " +
              std::to_string(c.y) + ") leaves the " + std::to_string(w) + "x" + std::to_string(h) + " image");
    return c;
  }
  const int x_lo = std::max(static_cast<int>(std::ceil(0.3 * w)), margin);
  const int x_hi = std::min(static_cast<int>(std::floor(0.7 * w)), w - 1 - margin);
  const int y_lo = std::max(static_cast<int>(std::ceil(0.3 * h)), margin);
  const int y_hi = std::min(static_cast<int>(std::floor(0.7 * h)), h - 1 - margin);
  check(x_lo <= x_hi && y_lo <= y_hi, out_of_bounds,
        "no center in the central box keeps a region of half-size " + std::to_string(margin) + " inside the " +
            std::to_string(w) + "x" + std::to_string(h) + " image");
  const int x = static_cast<int>(rng.uniform_int(x_lo, x_hi));
  const int y = static_cast<int>(rng.uniform_int(y_lo, y_hi));
  return {x, y};
}

int scaled_length(double fraction, const GrayImage& src) {
  return static_cast<int>(std::lround(fraction * std::min(src.width(), src.height())));
}

// cos/sin with multiples of 90 degrees made exact, so quarter and half turns
// map the integer grid onto itself.
std::pair<double, double> exact_cos_sin(double degrees) {
  const double rad = degrees * kPi / 180.0;
  double c = std::cos(rad);
  double s = std::sin(rad);
  if (std::abs(c) < 1e-12) c = 0.0;
  if (std::abs(s) < 1e-12) s = 0.0;
  if (std::abs(std::abs(c) - 1.0) < 1e-12) c = std::copysign(1.0, c);
  if (std::abs(std::abs(s) - 1.0) < 1e-12) s = std::copysign(1.0, s);
  return {c, s};
}

}  // namespace

double rotation_radius_fraction(Severity s) {
  static constexpr double k[] = {0.15, 0.25, 0.35};
  return k[severity_rank(s)];
}

double zcut_half_size_fraction(Severity s) {
  static constexpr double k[] = {0.12, 0.20, 0.30};
  return k[severity_rank(s)];
}

double rotation_default_angle(Severity s) {
  static constexpr double k[] = {45.0, 90.0, 180.0};
  return k[severity_rank(s)];
}

std::pair<double, double> obliteration_fraction_range(Severity s) {
  static constexpr std::pair<double, double> k[] = {{0.02, 0.05}, {0.05, 0.12}, {0.12, 0.25}};
  return k[severity_rank(s)];
}

Mask foreground_mask(const GrayImage& img) {
  constexpr int kReach = 5;
  const int w = img.width();
  const int h = img.height();
  // Separable dilation of the dark-pixel indicator: rows, then columns.
  std::vector<std::uint8_t> dark(static_cast<std::size_t>(w) * h);
  bool any = false;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool d = img.at(x, y) < 128;
      dark[static_cast<std::size_t>(y) * w + x] = d;
      any = any || d;
    }
  }
  Mask fg(w, h);
  if (!any) {
    std::fill(fg.bits.begin(), fg.bits.end(), 1);
    return fg;
  }
  std::vector<std::uint8_t> rows(dark.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, x - kReach); k <= std::min(w - 1, x + kReach) && !v; ++k) {
        v = dark[static_cast<std::size_t>(y) * w + k];
      }
      rows[static_cast<std::size_t>(y) * w + x] = v;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, y - kReach); k <= std::min(h - 1, y + kReach) && !v; ++k) {
        v = rows[static_cast<std::size_t>(k) * w + x];
      }
      fg.at(x, y) = v;
    }
  }
  return fg;
}

AlterationResult obliterate(const GrayImage& src, const AlterationSpec& spec) {
  require_kind(spec, Alteration::Obliteration);
  const auto [lo, hi] = obliteration_fraction_range(spec.severity);
  if (spec.magnitude) {
    check(*spec.magnitude > 0.0 && *spec.magnitude <= 0.5, ErrorCode::InvalidSpec,
          "obliteration fraction must lie in (0, 0.5]");
  }

  Rng rng(spec.seed);
  AlterationResult out{src, Mask(src.width(), src.height()), spec};
  const PixelPoint center = resolve_center(src, spec, 0, rng, ErrorCode::InvalidSpec);
  const double fraction = spec.magnitude ? *spec.magnitude : rng.uniform(lo, hi);
  out.spec_resolved.center = center;
  out.spec_resolved.magnitude = fraction;

  const Mask fg = foreground_mask(src);
  std::vector<PixelPoint> fg_pixels;
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) {
      if (fg.at(x, y)) fg_pixels.push_back({x, y});
    }
  }
  const double n_fg = static_cast<double>(fg_pixels.size());
  auto target = static_cast<std::size_t>(std::ceil(fraction * n_fg - 1e-9));
  if (!spec.magnitude) {
    // Keep the painted count itself inside the severity band.
    target = std::clamp(target, static_cast<std::size_t>(std::ceil(lo * n_fg - 1e-9)),
                        std::max(static_cast<std::size_t>(std::floor(hi * n_fg + 1e-9)), std::size_t{1}));
  }
  target = std::max<std::size_t>(target, 1);
  std::size_t painted_fg = 0;

  auto done = [&] { return painted_fg >= target; };
  auto paint = [&](int x, int y) {
    if (done() || !src.contains(x, y) || out.mask.at(x, y)) return;
    out.mask.at(x, y) = 1;
    out.image.at(x, y) = static_cast<std::uint8_t>(255 - rng.uniform_int(0, kObliterationNoise));
    if (fg.at(x, y)) ++painted_fg;
  };
  auto paint_disk = [&](double cx, double cy, double radius) {
    const int x0 = static_cast<int>(std::floor(cx - radius));
    const int x1 = static_cast<int>(std::ceil(cx + radius));
    const int y0 = static_cast<int>(std::floor(cy - radius));
    const int y1 = static_cast<int>(std::ceil(cy + radius));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius) paint(x, y);
      }
    }
  };

  const double spread = 0.25 * std::min(src.width(), src.height());
  auto near_center = [&]() -> std::pair<double, double> {
    const double a = rng.uniform(0.0, 2.0 * kPi);
    const double r = spread * std::sqrt(rng.uniform());
    return {center.x + r * std::cos(a), center.y + r * std::sin(a)};
  };

  // Burns: 0-2 filled ellipses.
  const int burns = static_cast<int>(rng.uniform_int(0, 2));
  for (int b = 0; b < burns && !done(); ++b) {
    const auto [bx, by] = near_center();
    const double ax = rng.uniform(2.0, 3.0 + 3.0 * severity_rank(spec.severity));
    const double ay = rng.uniform(2.0, 3.0 + 3.0 * severity_rank(spec.severity));
    const double rot = rng.uniform(0.0, kPi);
    const double c = std::cos(rot);
    const double s = std::sin(rot);
    const int reach = static_cast<int>(std::ceil(std::max(ax, ay)));
    for (int y = static_cast<int>(by) - reach; y <= static_cast<int>(by) + reach; ++y) {
      for (int x = static_cast<int>(bx) - reach; x <= static_cast<int>(bx) + reach; ++x) {
        const double u = (x - bx) * c + (y - by) * s;
        const double v = -(x - bx) * s + (y - by) * c;
        if ((u * u) / (ax * ax) + (v * v) / (ay * ay) <= 1.0) paint(x, y);
      }
    }
  }

  // Scratches: thick polylines until the target area is reached.
  for (int stroke = 0; stroke < 400 && !done(); ++stroke) {
    auto [px, py] = near_center();
    if (stroke >= 200) {
      // Far from the center little foreground may remain; restart on a print pixel.
      const auto& p = fg_pixels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(fg_pixels.size()) - 1))];
      px = p.x;
      py = p.y;
    }
    const double thickness = static_cast<double>(rng.uniform_int(1, 2 + severity_rank(spec.severity)));
    double heading = rng.uniform(0.0, 2.0 * kPi);
    const int segments = static_cast<int>(rng.uniform_int(2, 4));
    for (int seg = 0; seg < segments && !done(); ++seg) {
      const double length = rng.uniform(8.0, 25.0);
      const double dx = std::cos(heading);
      const double dy = std::sin(heading);
      for (double t = 0.0; t <= length && !done(); t += 0.5) paint_disk(px + t * dx, py + t * dy, thickness);
      px += length * dx;
      py += length * dy;
      heading += rng.uniform(-kPi / 4.0, kPi / 4.0);
    }
  }
  // Whatever remains is painted in seeded random order so the target is always met.
  if (!done()) {
    rng.shuffle(fg_pixels);
    for (const auto& p : fg_pixels) paint(p.x, p.y);
  }
  return out;
}

AlterationResult central_rotate(const GrayImage& src, const AlterationSpec& spec) {
  require_kind(spec, Alteration::CentralRotation);
  const double angle = spec.magnitude ? *spec.magnitude : rotation_default_angle(spec.severity);
  check(angle > 0.0 && angle <= 180.0, ErrorCode::InvalidSpec, "rotation angle must lie in (0, 180] degrees");
  const int radius = scaled_length(rotation_radius_fraction(spec.severity), src);
  check(radius >= 1, ErrorCode::DiskOutOfBounds, "image too small for a rotation disk");

  Rng rng(spec.seed);
  const PixelPoint c = resolve_center(src, spec, radius, rng, ErrorCode::DiskOutOfBounds);
  AlterationResult out{src, Mask(src.width(), src.height()), spec};
  out.spec_resolved.center = c;
  out.spec_resolved.magnitude = angle;

  const auto [cs, sn] = exact_cos_sin(angle);
  const int w = src.width();
  const int h = src.height();
  for (int y = c.y - radius; y <= c.y + radius; ++y) {
    for (int x = c.x - radius; x <= c.x + radius; ++x) {
      const int dx = x - c.x;
      const int dy = y - c.y;
      if (dx * dx + dy * dy > radius * radius) continue;
      out.mask.at(x, y) = 1;
      // Inverse map: rotate the destination offset by -angle.
      const double sx = c.x + dx * cs + dy * sn;
      const double sy = c.y - dx * sn + dy * cs;
      if (spec.bilinear_rotation) {
        const double fx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
        const double fy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
        const int x0 = static_cast<int>(std::floor(fx));
        const int y0 = static_cast<int>(std::floor(fy));
        const int x1 = std::min(x0 + 1, w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double ax = fx - x0;
        const double ay = fy - y0;
        const double v = (1 - ay) * ((1 - ax) * src.at(x0, y0) + ax * src.at(x1, y0)) +
                         ay * ((1 - ax) * src.at(x0, y1) + ax * src.at(x1, y1));
        out.image.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      } else {
        const int ix = std::clamp(static_cast<int>(std::lround(sx)), 0, w - 1);
        const int iy = std::clamp(static_cast<int>(std::lround(sy)), 0, h - 1);
        out.image.at(x, y) = src.at(ix, iy);
      }
    }
  }
  return out;
}

AlterationResult z_cut(const GrayImage& src, const AlterationSpec& spec) {
  require_kind(spec, Alteration::ZCut);
  const double half = spec.magnitude ? *spec.magnitude : scaled_length(zcut_half_size_fraction(spec.severity), src);
  check(half >= 4.0 && half == std::floor(half), ErrorCode::InvalidSpec,
        "Z-cut half-size must be an integer >= 4, got " + std::to_string(half));
  const int s = static_cast<int>(half);

  Rng rng(spec.seed);
  const PixelPoint c = resolve_center(src, spec, s, rng, ErrorCode::SquareOutOfBounds);
  AlterationResult out{src, Mask(src.width(), src.height()), spec};
  out.spec_resolved.center = c;
  out.spec_resolved.magnitude = half;

  for (int dy = -s; dy <= s; ++dy) {
    for (int dx = -s; dx <= s; ++dx) {
      out.mask.at(c.x + dx, c.y + dy) = 1;
      // Open triangles on either side of the anti-diagonal dx + dy == 0 trade
      // places through the point reflection about the center.
      if (std::abs(dx) < s && std::abs(dy) < s && dx + dy != 0) {
        out.image.at(c.x + dx, c.y + dy) = src.at(c.x - dx, c.y - dy);
      }
    }
  }
  if (spec.zcut_seam) {
    auto darken = [&](int x, int y) {
      auto& p = out.image.at(x, y);
      p = static_cast<std::uint8_t>(std::max(0, p - kZcutSeamDarkening));
    };
    for (int dx = -s; dx <= s; ++dx) {
      darken(c.x + dx, c.y - s);  // top edge
      darken(c.x + dx, c.y + s);  // bottom edge
    }
    for (int dx = -s + 1; dx <= s - 1; ++dx) darken(c.x + dx, c.y - dx);  // anti-diagonal, corners already done
  }
  return out;
}

AlterationResult alter(const GrayImage& src, const AlterationSpec& spec) {
  switch (spec.kind) {
    case Alteration::Obliteration: return obliterate(src, spec);
    case Alteration::CentralRotation: return central_rotate(src, spec);
    case Alteration::ZCut: return z_cut(src, spec);
    case Alteration::Real: break;
  }
  fail(ErrorCode::InvalidSpec, "Real is not an alteration kind");
}

std::string_view to_string(RidgePattern p) noexcept {
  switch (p) {
    case RidgePattern::Concentric: return "Concentric";
    case RidgePattern::Loop: return "Loop";
    case RidgePattern::Whorl: return "Whorl";
  }
  return "?";
}

GrayImage synth_fingerprint(int width, int height, RidgePattern pattern, std::uint64_t seed) {
  return synth_fingerprint(width, height, SynthStyle{pattern}, seed);
}

GrayImage synth_fingerprint(int width, int height, const SynthStyle& style, std::uint64_t seed) {
  check(width >= 32 && height >= 32, ErrorCode::InvalidArgument, "synthetic prints need sides >= 32");
  check(style.min_period > 0 && style.min_period <= style.max_period, ErrorCode::InvalidArgument,
        "invalid ridge period range");
  Rng rng(seed);
  const double lambda = rng.uniform(style.min_period, style.max_period);
  const double core_x = width / 2.0 + rng.uniform(-0.1, 0.1) * width;
  const double core_y = height / 2.0 + rng.uniform(-0.1, 0.1) * height;
  const double phase = rng.uniform(0.0, lambda);
  const double warp_amp = rng.uniform(0.0, 0.6) * lambda;
  const double warp_period = rng.uniform(30.0, 60.0);
  const double warp_phase = rng.uniform(0.0, 2.0 * kPi);

  auto phi = [&](double x, double y) {
    const double dx = x - core_x;
    const double dy = y - core_y;
    double value = 0.0;
    switch (style.pattern) {
      case RidgePattern::Concentric:
        value = std::hypot(dx, dy);
        break;
      case RidgePattern::Loop: {
        // Arches above the core, slanted limbs below it.
        const double sx = dx - style.slant * 0.6 * std::max(dy, 0.0);
        value = dy < 0 ? std::hypot(sx, 1.3 * dy) : std::abs(sx) + 0.35 * dy;
        break;
      }
      case RidgePattern::Whorl: {
        const double theta = std::atan2(dy, dx + style.slant * 0.3 * dy);
        value = std::hypot(dx, dy) + lambda * theta / (2.0 * kPi);
        break;
      }
    }
    return value + warp_amp * std::sin(2.0 * kPi * (x + y) / warp_period + warp_phase) + phase;
  };

  std::vector<std::uint8_t> binary(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double v = 128.0 + 127.0 * std::cos(2.0 * kPi * phi(x, y) / lambda);
      binary[static_cast<std::size_t>(y) * width + x] = v < 128.0 ? 0 : 255;
    }
  }
  GrayImage img(width, height);
  const double ex = width / 2.0;
  const double ey = height / 2.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double nx = (x + 0.5 - ex) / ex;
      const double ny = (y + 0.5 - ey) / ey;
      if (nx * nx + ny * ny > 1.0) continue;  // stays 255
      int sum = 0;
      for (int k = -1; k <= 1; ++k) {
        for (int j = -1; j <= 1; ++j) {
          const int xx = std::clamp(x + j, 0, width - 1);
          const int yy = std::clamp(y + k, 0, height - 1);
          sum += binary[static_cast<std::size_t>(yy) * width + xx];
        }
      }
      img.at(x, y) = static_cast<std::uint8_t>((sum + 4) / 9);
    }
  }
  return img;
}

Manifest make_synth_dataset(int n_subjects, const std::filesystem::path& out_dir, std::uint64_t seed, int width,
                            int height) {
  namespace fs = std::filesystem;
  check(n_subjects >= 1, ErrorCode::InvalidArgument, "n_subjects must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check(!ec, ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  static constexpr RidgePattern kFingerPattern[] = {RidgePattern::Whorl, RidgePattern::Loop, RidgePattern::Loop,
                                                    RidgePattern::Whorl, RidgePattern::Concentric};
  Manifest manifest;
  manifest.root = out_dir;
  manifest.scheme = ManifestScheme::Explicit;

  auto ensure_parent = [&](const fs::path& p) {
    fs::create_directories(p.parent_path(), ec);
    check(!ec, ErrorCode::IoError, "cannot create " + p.parent_path().string());
  };

  for (int subject = 1; subject <= n_subjects; ++subject) {
    const Gender gender = subject % 2 == 1 ? Gender::Male : Gender::Female;
    for (Hand hand : kHands) {
      for (Finger finger : kFingers) {
        RecordLabel label{static_cast<std::uint32_t>(subject), gender, hand, finger, Alteration::Real, Severity::None};
        SynthStyle style;
        style.pattern = kFingerPattern[static_cast<int>(finger)];
        // Female prints carry the denser ridges.
        style.min_period = gender == Gender::Male ? 8.0 : 6.0;
        style.max_period = gender == Gender::Male ? 10.0 : 8.0;
        style.slant = hand == Hand::Left ? -1.0 : 1.0;
        const auto base_seed =
            derive_seed(seed, static_cast<std::uint64_t>(subject) * 16 + static_cast<int>(hand) * 5 +
                                  static_cast<int>(finger));
        const GrayImage base = synth_fingerprint(width, height, style, base_seed);

        const auto real_rel = render_socofing_name(label);
        ensure_parent(out_dir / real_rel);
        save_bmp(base, out_dir / real_rel);
        manifest.entries.push_back({real_rel, label, {}});

        for (Alteration kind : {Alteration::Obliteration, Alteration::CentralRotation, Alteration::ZCut}) {
          for (Severity sev : {Severity::Easy, Severity::Medium, Severity::Hard}) {
            RecordLabel altered = label;
            altered.alteration = kind;
            altered.severity = sev;
            AlterationSpec spec;
            spec.kind = kind;
            spec.severity = sev;
            spec.seed = derive_seed(base_seed, static_cast<std::uint64_t>(kind) * 4 + static_cast<int>(sev));
            const auto result = alter(base, spec);
            const auto rel = render_socofing_name(altered);
            std::string mask_rel = "Masks/" + rel.substr(std::string("Altered/").size());
            mask_rel = mask_rel.substr(0, mask_rel.size() - 4) + ".png";
            ensure_parent(out_dir / rel);
            ensure_parent(out_dir / mask_rel);
            save_bmp(result.image, out_dir / rel);
            save_mask_png(result.mask, out_dir / mask_rel);
            manifest.entries.push_back({rel, altered, mask_rel});
          }
        }
      }
    }
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace fpx
