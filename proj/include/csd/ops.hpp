#pragma once

#include "csd/tensor.hpp"

#include <cstdint>
#include <vector>

namespace csd {

/// Stabilizer added to every feature/image denominator.
inline constexpr float kDivEps = 1e-4f;

enum class BinaryKind { add, sub, mul, div };

/// Elementwise a (op) b on equal shapes. `div` computes a / (b + eps).
Tensor ew_binary(const Tensor& a, const Tensor& b, BinaryKind kind, float eps = kDivEps);

inline Tensor add(const Tensor& a, const Tensor& b) { return ew_binary(a, b, BinaryKind::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return ew_binary(a, b, BinaryKind::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return ew_binary(a, b, BinaryKind::mul); }
inline Tensor div(const Tensor& a, const Tensor& b, float eps = kDivEps) {
    return ew_binary(a, b, BinaryKind::div, eps);
}

Tensor add_scalar(const Tensor& x, float s);
Tensor mul_scalar(const Tensor& x, float s);

/// Repeats extent-1 axes of `x` to reach `target`. Backward sums.
Tensor broadcast_to(const Tensor& x, const Shape& target);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
/// 0.5u^2 for |u| <= 1, |u| - 0.5 otherwise.
Tensor smooth_l1(const Tensor& x);
Tensor clamp(const Tensor& x, float lo, float hi);
/// max(x, floor) elementwise; gradient passes where x > floor.
Tensor clamp_min(const Tensor& x, float floor);

/// 2x2 window, stride 2. Ties route the gradient to the first maximum in scan order.
Tensor maxpool2x2(const Tensor& x);
Tensor upsample_nearest2x(const Tensor& x);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int64_t begin, int64_t count);
/// Spatial crop [y, y+h) x [x, x+w) of every batch item and channel.
Tensor crop(const Tensor& x, int64_t y, int64_t x0, int64_t h, int64_t w);
/// Picks batch item `index` as a batch of one.
Tensor batch_item(const Tensor& x, int64_t index);
Tensor concat_batch(const std::vector<Tensor>& items);

/// Mean of every element as a 1x1x1x1 tensor.
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);
/// Per-item mean over (channel, height, width): shape (N,1,1,1).
Tensor mean_per_item(const Tensor& x);

struct Conv2dParams {
    Tensor weight; // (out_ch, in_ch, kH, kW)
    Tensor bias;   // (1, out_ch, 1, 1), may be undefined
};

Tensor conv2d(const Tensor& x, const Conv2dParams& p, int stride = 1, int pad = 1);

struct BatchNormParams {
    Tensor gamma; // (1, C, 1, 1)
    Tensor beta;  // (1, C, 1, 1)
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float momentum = 0.1f;
    float eps = 1e-5f;

    static BatchNormParams make(int64_t channels);
};

/// Training mode normalizes with batch statistics and updates the running
/// estimates; eval mode uses the running estimates.
Tensor batchnorm2d(const Tensor& x, BatchNormParams& p, bool training);

} // namespace csd
