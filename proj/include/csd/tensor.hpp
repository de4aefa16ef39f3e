#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csd {

/// Rank-4 extents in (batch, channel, height, width) order.
struct Shape {
    std::array<int64_t, 4> dims{1, 1, 1, 1};

    Shape() = default;
    Shape(int64_t n, int64_t c, int64_t h, int64_t w) : dims{n, c, h, w} {}

    int64_t n() const { return dims[0]; }
    int64_t c() const { return dims[1]; }
    int64_t h() const { return dims[2]; }
    int64_t w() const { return dims[3]; }
    int64_t numel() const { return dims[0] * dims[1] * dims[2] * dims[3]; }
    int64_t plane() const { return dims[2] * dims[3]; }

    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorImpl;

// One recorded operation. `backward` reads the output gradient and
// accumulates into the gradients of `inputs` that require grad.
struct Node {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad; // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> node; // null for leaves

    bool is_leaf() const { return node == nullptr; }
    float* grad_buffer(); // allocates zeros on demand
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& s, bool requires_grad = false);
    static Tensor full(const Shape& s, float value, bool requires_grad = false);
    static Tensor from(const Shape& s, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float v, bool requires_grad = false);
    static Tensor ones_like(const Tensor& t) { return full(t.shape(), 1.0f); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t numel() const { return impl_->shape.numel(); }

    std::span<float> data() { return impl_->data; }
    std::span<const float> data() const { return impl_->data; }
    float item() const;
    float at(int64_t n, int64_t c, int64_t y, int64_t x) const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v);
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const float> grad() const { return impl_->grad; }
    std::span<float> grad_mut() { return {impl_->grad_buffer(), static_cast<size_t>(numel())}; }
    void zero_grad() { impl_->grad.clear(); }

    /// Same storage values, cut from the tape.
    Tensor detach() const;
    Tensor clone() const;

    // Internal plumbing for op implementations.
    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse pass from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are recomputed on every call.
void backward(const Tensor& loss);

/// Number of operations a backward pass from `loss` would visit.
size_t tape_size(const Tensor& loss);

bool grad_enabled();

/// Disables tape recording for the lifetime of the guard.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// When enabled, elementwise ops reject non-finite inputs.
void set_debug_checks(bool enabled);
bool debug_checks();

bool all_finite(std::span<const float> v);

} // namespace csd
