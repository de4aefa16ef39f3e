#include "csd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace csd {

namespace {

thread_local bool g_grad_enabled = true;
bool g_debug_checks = false;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

// Post-order DFS over the recorded graph, iterative to survive deep nets.
std::vector<detail::TensorImpl*> topo_order(const ImplPtr& root) {
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<const detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
    if (!root->node) return order;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (next < t->node->inputs.size()) {
            detail::TensorImpl* in = t->node->inputs[next++].get();
            if (in->node && in->requires_grad && seen.insert(in).second) {
                stack.emplace_back(in, 0);
            }
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }
    return order;
}

} // namespace

std::string Shape::str() const {
    return "(" + std::to_string(dims[0]) + "," + std::to_string(dims[1]) + "," +
           std::to_string(dims[2]) + "," + std::to_string(dims[3]) + ")";
}

float* detail::TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad.data();
}

Tensor Tensor::zeros(const Shape& s, bool requires_grad) { return full(s, 0.0f, requires_grad); }

Tensor Tensor::full(const Shape& s, float value, bool requires_grad) {
    for (auto d : s.dims) {
        if (d <= 0) throw ShapeError("tensor extents must be positive: " + s.str());
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = s;
    impl->data.assign(static_cast<size_t>(s.numel()), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(const Shape& s, std::vector<float> values, bool requires_grad) {
    if (static_cast<int64_t>(values.size()) != s.numel()) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + s.str());
    }
    Tensor t = zeros(s, requires_grad);
    t.impl_->data = std::move(values);
    return t;
}

Tensor Tensor::scalar(float v, bool requires_grad) { return full(Shape{1, 1, 1, 1}, v, requires_grad); }

float Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
    return impl_->data[0];
}

float Tensor::at(int64_t n, int64_t c, int64_t y, int64_t x) const {
    const Shape& s = shape();
    return impl_->data[static_cast<size_t>(((n * s.c() + c) * s.h() + y) * s.w() + x)];
}

void Tensor::set_requires_grad(bool v) {
    if (!impl_->is_leaf() && !v) throw std::logic_error("cannot clear requires_grad on a non-leaf tensor");
    impl_->requires_grad = v;
    if (!v) impl_->grad.clear();
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.impl_->requires_grad = impl_->requires_grad && impl_->is_leaf();
    return t;
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward on undefined tensor");
    if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + loss.shape().str());
    const auto& root = loss.impl();
    if (!root->requires_grad) return;
    if (root->is_leaf()) {
        root->grad_buffer()[0] += 1.0f;
        return;
    }
    std::vector<detail::TensorImpl*> order = topo_order(root);
    for (auto* t : order) t->grad.clear();
    root->grad_buffer()[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* t = *it;
        if (t->grad.empty()) continue; // no path from the loss
        t->node->backward(*t);
    }
    for (auto* t : order) {
        t->grad.clear();
        t->grad.shrink_to_fit();
    }
}

size_t tape_size(const Tensor& loss) { return topo_order(loss.impl()).size(); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks() { return g_debug_checks; }

bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

} // namespace csd
