#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpx/image.hpp"
#include "fpx/network.hpp"

namespace fpx {

// Heat in [0, 1] over the input image; max == 1 unless identically 0.
struct ActivationMap {
  int width = 0;
  int height = 0;
  std::vector<double> heat;  // row-major
  Task task = Task::Alteration;
  int class_index = 0;
  std::string source_layer;

  double at(int x, int y) const { return heat[static_cast<std::size_t>(y) * width + x]; }
};

inline constexpr std::string_view kDefaultCamLayer = "embed";

/// ReLU(sum_k w_k A_k) with w_k the spatial mean of the gradient over channel k.
/// activations and gradients are channels x height x width.
std::vector<double> weighted_feature_map(std::span<const double> activations, std::span<const double> gradients,
                                         int channels, int height, int width);

// Half-pixel-center bilinear resampling of a row-major raster.
std::vector<double> resize_bilinear(std::span<const double> src, int src_h, int src_w, int dst_h, int dst_w);

// Min-max normalization to [0, 1]; a constant raster maps to all zeros.
std::vector<double> normalize_min_max(std::span<const double> values);

// Upsample to the image size, then normalize.
ActivationMap activation_map_from_features(std::span<const double> activations, std::span<const double> gradients,
                                           int channels, int fh, int fw, int image_width, int image_height);

/// Gradient-weighted class activation map of `class_index` (argmax when nullopt)
/// taken at `layer`, mapped back onto the image.
ActivationMap grad_cam(const Model& model, const GrayImage& img, Task task, std::optional<int> class_index = {},
                       std::string_view layer = kDefaultCamLayer);

// Classic jet colormap, t in [0, 1].
std::array<std::uint8_t, 3> jet_color(double t);

/// Jet-colored heat blended over the grayscale image with opacity alpha * heat.
RgbImage overlay(const GrayImage& img, const ActivationMap& map, double alpha);

// round(255 * heat)
GrayImage heat_to_gray(const ActivationMap& map);

/// (mean heat inside mask) / (mean heat overall); 1 when the heat is all zero.
double localization_score(const ActivationMap& map, const Mask& mask);

}  // namespace fpx
