#include "csd/retinex.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace csd {

namespace {

constexpr float kLumaR = 0.299f;
constexpr float kLumaG = 0.587f;
constexpr float kLumaB = 0.114f;

void guidance_plane(const float* lg, int h, int w, float* a, float* b) {
    auto px = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return lg[static_cast<size_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // Row-pair max then column-pair max.
            const float u0 = std::max(px(y, x), px(y + 1, x));
            const float u1 = std::max(px(y, x + 1), px(y + 1, x + 1));
            const float c = px(y, x);
            const float diff = std::fabs(c - px(y, x - 1)) + std::fabs(c - px(y, x + 1)) +
                               std::fabs(px(y - 1, x) - c) + std::fabs(px(y + 1, x) - c);
            a[static_cast<size_t>(y) * w + x] = std::max(u0, u1);
            b[static_cast<size_t>(y) * w + x] = 0.25f * diff;
        }
    }
}

void require_single_channel(const Image& lg) {
    if (lg.channels != 1) throw std::invalid_argument("illumination guidance needs a single-channel image");
    if (lg.height < 2 || lg.width < 2) throw std::invalid_argument("illumination guidance needs extents >= 2");
}

} // namespace

Image to_grayscale(const Image& rgb) {
    if (rgb.channels == 1) return rgb;
    if (rgb.channels != 3) throw std::invalid_argument("to_grayscale expects 1 or 3 channels");
    Image out(rgb.height, rgb.width, 1);
    for (int y = 0; y < rgb.height; ++y) {
        for (int x = 0; x < rgb.width; ++x) {
            out.at(y, x) = kLumaR * rgb.at(y, x, 0) + kLumaG * rgb.at(y, x, 1) + kLumaB * rgb.at(y, x, 2);
        }
    }
    out.clamp01();
    return out;
}

Tensor to_grayscale(const Tensor& rgb) {
    const Shape& s = rgb.shape();
    if (s.c() == 1) return rgb.detach();
    if (s.c() != 3) throw ShapeError("to_grayscale expects 1 or 3 channels, got " + s.str());
    Tensor out = Tensor::zeros(Shape{s.n(), 1, s.h(), s.w()});
    auto od = out.data();
    const auto& in = rgb.data();
    const int64_t plane = s.plane();
    for (int64_t n = 0; n < s.n(); ++n) {
        const float* r = in.data() + n * 3 * plane;
        for (int64_t i = 0; i < plane; ++i) {
            od[n * plane + i] = std::clamp(kLumaR * r[i] + kLumaG * r[plane + i] + kLumaB * r[2 * plane + i], 0.0f, 1.0f);
        }
    }
    return out;
}

GuidanceParts guidance_parts(const Image& lg) {
    require_single_channel(lg);
    GuidanceParts parts;
    parts.a.resize(lg.size());
    parts.b.resize(lg.size());
    guidance_plane(lg.pixels.data(), lg.height, lg.width, parts.a.data(), parts.b.data());
    return parts;
}

GuidanceMap illumination_guidance(const Image& lg) {
    GuidanceParts parts = guidance_parts(lg);
    GuidanceMap g;
    g.height = lg.height;
    g.width = lg.width;
    g.values.resize(lg.size());
    for (size_t i = 0; i < g.values.size(); ++i) g.values[i] = parts.a[i] + parts.b[i];
    g.source_hash = content_hash(lg.pixels);
    return g;
}

Tensor illumination_guidance(const Tensor& lg) {
    const Shape& s = lg.shape();
    if (s.c() != 1) throw ShapeError("illumination guidance needs a single-channel tensor, got " + s.str());
    if (s.h() < 2 || s.w() < 2) throw ShapeError("illumination guidance needs extents >= 2");
    Tensor out = Tensor::zeros(s);
    std::vector<float> b(static_cast<size_t>(s.plane()));
    auto od = out.data();
    for (int64_t n = 0; n < s.n(); ++n) {
        float* a = od.data() + n * s.plane();
        guidance_plane(lg.data().data() + n * s.plane(), static_cast<int>(s.h()), static_cast<int>(s.w()), a, b.data());
        for (int64_t i = 0; i < s.plane(); ++i) a[i] += b[static_cast<size_t>(i)];
    }
    return out;
}

Image normalize_for_display(const GuidanceMap& g) {
    Image out(g.height, g.width, 1);
    const auto [lo, hi] = std::minmax_element(g.values.begin(), g.values.end());
    const float range = *hi - *lo;
    if (range > 0.0f) {
        for (size_t i = 0; i < g.values.size(); ++i) out.pixels[i] = (g.values[i] - *lo) / range;
    }
    out.clamp01();
    return out;
}

uint64_t content_hash(std::span<const float> values) {
    uint64_t h = 1469598103934665603ull; // FNV-1a
    for (float v : values) {
        uint32_t bits = std::bit_cast<uint32_t>(v);
        for (int k = 0; k < 4; ++k) {
            h ^= (bits >> (8 * k)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

Tensor csd_divide(const Tensor& f_r, const Tensor& f_i, float eps) {
    if (!(f_r.shape() == f_i.shape())) {
        throw ShapeError("csd_divide: feature shapes differ " + f_r.shape().str() + " vs " + f_i.shape().str());
    }
    return div(f_r, f_i, eps);
}

Tensor final_enhance(const Tensor& reflectance, const Tensor& illumination, float eps) {
    const Shape& rs = reflectance.shape();
    const Shape& is = illumination.shape();
    if (is.c() != 1 || is.n() != rs.n() || is.h() != rs.h() || is.w() != rs.w()) {
        throw ShapeError("final_enhance: illumination " + is.str() + " incompatible with reflectance " + rs.str());
    }
    Tensor denom = broadcast_to(clamp_min(illumination, eps), rs);
    return clamp(div(reflectance, denom, 0.0f), 0.0f, 1.0f);
}

Image final_enhance(const Image& reflectance, const Image& illumination, float eps) {
    NoGradGuard guard;
    return tensor_to_image(final_enhance(image_to_tensor(reflectance), image_to_tensor(illumination), eps));
}

Tensor retinex_reconstruct(const Tensor& reflectance, const Tensor& illumination) {
    const Shape& rs = reflectance.shape();
    const Shape& is = illumination.shape();
    if (is.c() != 1 || is.n() != rs.n() || is.h() != rs.h() || is.w() != rs.w()) {
        throw ShapeError("retinex_reconstruct: illumination " + is.str() + " incompatible with " + rs.str());
    }
    return mul(reflectance, broadcast_to(illumination, rs));
}

Image retinex_reconstruct(const Image& reflectance, const Image& illumination) {
    NoGradGuard guard;
    return tensor_to_image(retinex_reconstruct(image_to_tensor(reflectance), image_to_tensor(illumination)));
}

} // namespace csd
