#pragma once

#include "csd/image.hpp"
#include "csd/ops.hpp"

#include <cstdint>
#include <vector>

namespace csd {

/// BT.601 luma. Single-channel input is returned unchanged.
Image to_grayscale(const Image& rgb);
/// (N,3,H,W) -> (N,1,H,W) luma; (N,1,H,W) passes through. Not recorded on the tape.
Tensor to_grayscale(const Tensor& rgb);

/// Edge-aware guidance IG = A + B on a single-channel image.
///   A(i,j): max over the 2x2 block {i,i+1} x {j,j+1}
///   B(i,j): mean absolute difference to the 4-neighbours
/// Borders replicate the last row/column, so the map has the source extent.
/// Values are not clamped; A + B may exceed 1.
struct GuidanceMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;
    uint64_t source_hash = 0;

    float at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

struct GuidanceParts {
    std::vector<float> a;
    std::vector<float> b;
};

GuidanceParts guidance_parts(const Image& lg);
GuidanceMap illumination_guidance(const Image& lg);
/// Per-item guidance of a (N,1,H,W) tensor. Not recorded on the tape.
Tensor illumination_guidance(const Tensor& lg);

/// Min-max normalization to [0,1] for display; a flat map becomes all zeros.
Image normalize_for_display(const GuidanceMap& g);

uint64_t content_hash(std::span<const float> values);

/// Reflectance-stream feature divided by the same-depth illumination feature:
/// f_r / (f_i + eps). Gradients reach both streams.
Tensor csd_divide(const Tensor& f_r, const Tensor& f_i, float eps = kDivEps);

/// Image-level division R / max(I, eps), clamped to [0,1]. I is (N,1,H,W)
/// and is broadcast over R's channels.
Tensor final_enhance(const Tensor& reflectance, const Tensor& illumination, float eps = kDivEps);
Image final_enhance(const Image& reflectance, const Image& illumination, float eps = kDivEps);

/// L = R * I with I broadcast over channels.
Tensor retinex_reconstruct(const Tensor& reflectance, const Tensor& illumination);
Image retinex_reconstruct(const Image& reflectance, const Image& illumination);

} // namespace csd
