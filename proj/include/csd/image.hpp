#pragma once

#include "csd/tensor.hpp"

#include <cstdint>
#include <vector>

namespace csd {

/// H x W x C float image, interleaved row-major, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f);

    float& at(int y, int x, int c = 0) { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c = 0) const { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }
    size_t size() const { return pixels.size(); }
    bool same_extent(const Image& o) const { return height == o.height && width == o.width; }
    bool operator==(const Image&) const = default;

    /// Clamps every value to [0,1]; NaN becomes 0.
    void clamp01();
};

/// Images of identical extents/channels stacked as (N, C, H, W).
Tensor images_to_tensor(const std::vector<Image>& images);
Tensor image_to_tensor(const Image& img);
/// Batch item `index` of a (N, C, H, W) tensor, clamped to [0,1].
Image tensor_to_image(const Tensor& t, int64_t index = 0);

} // namespace csd
