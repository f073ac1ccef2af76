#include "fpx/explain.hpp"

#include <algorithm>
#include <cmath>

#include "fpx/error.hpp"

namespace fpx {

std::vector<double> weighted_feature_map(std::span<const double> activations, std::span<const double> gradients,
                                         int channels, int height, int width) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  check(activations.size() == plane * channels && gradients.size() == activations.size(), ErrorCode::ShapeMismatch,
        "feature maps and gradients must be channels x height x width");
  std::vector<double> map(plane, 0.0);
  for (int k = 0; k < channels; ++k) {
    const auto a = activations.subspan(plane * k, plane);
    const auto g = gradients.subspan(plane * k, plane);
    double weight = 0.0;
    for (double v : g) weight += v;
    weight /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) map[i] += weight * a[i];
  }
  for (auto& v : map) v = std::max(v, 0.0);
  return map;
}

std::vector<double> resize_bilinear(std::span<const double> src, int src_h, int src_w, int dst_h, int dst_w) {
  check(src.size() == static_cast<std::size_t>(src_h) * src_w, ErrorCode::ShapeMismatch, "raster size mismatch");
  std::vector<double> out(static_cast<std::size_t>(dst_h) * dst_w);
  const double sy = static_cast<double>(src_h) / dst_h;
  const double sx = static_cast<double>(src_w) / dst_w;
  for (int y = 0; y < dst_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src_h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double ay = fy - y0;
    for (int x = 0; x < dst_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src_w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double ax = fx - x0;
      auto at = [&](int yy, int xx) { return src[static_cast<std::size_t>(yy) * src_w + xx]; };
      out[static_cast<std::size_t>(y) * dst_w + x] =
          (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x1)) + ay * ((1 - ax) * at(y1, x0) + ax * at(y1, x1));
    }
  }
  return out;
}

std::vector<double> normalize_min_max(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 1e-12 * std::max(1.0, std::abs(*hi)))) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::clamp((values[i] - *lo) / range, 0.0, 1.0);
  return out;
}

ActivationMap activation_map_from_features(std::span<const double> activations, std::span<const double> gradients,
                                           int channels, int fh, int fw, int image_width, int image_height) {
  const auto coarse = weighted_feature_map(activations, gradients, channels, fh, fw);
  ActivationMap map;
  map.width = image_width;
  map.height = image_height;
  map.heat = normalize_min_max(resize_bilinear(coarse, fh, fw, image_height, image_width));
  return map;
}

ActivationMap grad_cam(const Model& model, const GrayImage& img, Task task, std::optional<int> class_index,
                       std::string_view layer) {
  check(model.has_head(task), ErrorCode::MissingHead, "model has no " + std::string(to_string(task)) + " head");
  Tensor sample = preprocess(img, model.config.input_height, model.config.input_width);
  sample.shape.insert(sample.shape.begin(), 1);

  int cls = 0;
  if (class_index) {
    cls = *class_index;
  } else {
    const auto logits = forward(model, sample, task);
    cls = static_cast<int>(std::max_element(logits.values.begin(), logits.values.end()) - logits.values.begin());
  }
  const auto probe = probe_layer(model, sample, task, cls, layer);
  auto map = activation_map_from_features(probe.activations, probe.gradients, probe.channels, probe.height, probe.width,
                                          img.width(), img.height());
  map.task = task;
  map.class_index = cls;
  map.source_layer = std::string(layer);
  return map;
}

std::array<std::uint8_t, 3> jet_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto channel = [&](double center) {
    const double v = std::clamp(1.5 - std::abs(4.0 * t - center), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(255.0 * v + 0.5));
  };
  return {channel(3.0), channel(2.0), channel(1.0)};
}

RgbImage overlay(const GrayImage& img, const ActivationMap& map, double alpha) {
  check(map.width == img.width() && map.height == img.height(), ErrorCode::ShapeMismatch,
        "activation map and image dimensions differ");
  check(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  RgbImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const std::uint8_t g = img.at(x, y);
      const double heat = map.at(x, y);
      const double a = alpha * heat;
      if (a <= 0.0) {
        out.set(x, y, {g, g, g});
        continue;
      }
      const auto c = jet_color(heat);
      std::array<std::uint8_t, 3> px{};
      for (int k = 0; k < 3; ++k) px[k] = static_cast<std::uint8_t>(std::floor((1.0 - a) * g + a * c[k] + 0.5));
      out.set(x, y, px);
    }
  }
  return out;
}

GrayImage heat_to_gray(const ActivationMap& map) {
  std::vector<std::uint8_t> px(map.heat.size());
  std::transform(map.heat.begin(), map.heat.end(), px.begin(),
                 [](double h) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(h, 0.0, 1.0))); });
  return GrayImage(map.width, map.height, std::move(px));
}

double localization_score(const ActivationMap& map, const Mask& mask) {
  check(map.width == mask.width && map.height == mask.height, ErrorCode::ShapeMismatch,
        "activation map and mask dimensions differ");
  const auto area = mask.area();
  check(area > 0, ErrorCode::EmptyMask, "mask has no pixels");
  double inside = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < map.heat.size(); ++i) {
    total += map.heat[i];
    if (mask.bits[i]) inside += map.heat[i];
  }
  if (total <= 0.0) return 1.0;
  const double mean_inside = inside / static_cast<double>(area);
  const double mean_all = total / static_cast<double>(map.heat.size());
  return mean_inside / mean_all;
}

}  // namespace fpx
