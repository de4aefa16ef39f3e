#include "csd/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csd {

Image::Image(int h, int w, int c, float fill) : height(h), width(w), channels(c) {
    if (h <= 0 || w <= 0 || (c != 1 && c != 3)) {
        throw std::invalid_argument("image extents must be positive with 1 or 3 channels");
    }
    pixels.assign(static_cast<size_t>(h) * w * c, fill);
}

void Image::clamp01() {
    for (float& v : pixels) v = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
}

Tensor images_to_tensor(const std::vector<Image>& images) {
    if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    const Image& f = images.front();
    const Shape s{static_cast<int64_t>(images.size()), f.channels, f.height, f.width};
    std::vector<float> data(static_cast<size_t>(s.numel()));
    for (size_t n = 0; n < images.size(); ++n) {
        const Image& img = images[n];
        if (img.height != f.height || img.width != f.width || img.channels != f.channels) {
            throw ShapeError("images_to_tensor: batch items differ in extent");
        }
        for (int c = 0; c < img.channels; ++c) {
            float* dst = data.data() + (n * img.channels + c) * static_cast<size_t>(s.plane());
            for (int y = 0; y < img.height; ++y) {
                for (int x = 0; x < img.width; ++x) dst[y * img.width + x] = img.at(y, x, c);
            }
        }
    }
    return Tensor::from(s, std::move(data));
}

Tensor image_to_tensor(const Image& img) { return images_to_tensor({img}); }

Image tensor_to_image(const Tensor& t, int64_t index) {
    const Shape& s = t.shape();
    if (s.c() != 1 && s.c() != 3) throw ShapeError("tensor_to_image: expected 1 or 3 channels, got " + s.str());
    if (index < 0 || index >= s.n()) throw ShapeError("tensor_to_image: batch index out of range");
    Image img(static_cast<int>(s.h()), static_cast<int>(s.w()), static_cast<int>(s.c()));
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) img.at(y, x, c) = t.at(index, c, y, x);
        }
    }
    img.clamp01();
    return img;
}

} // namespace csd
