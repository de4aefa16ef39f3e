#include "csd/ops.hpp"
#include "csd/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace csd {

using detail::Node;
using detail::TensorImpl;

namespace {

using BackFn = std::function<void(const TensorImpl&)>;

bool any_requires_grad(std::initializer_list<const Tensor*> ins) {
    if (!grad_enabled()) return false;
    return std::any_of(ins.begin(), ins.end(), [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

// Wraps `data` as a tensor and, when any input is on the tape, records `fn`.
Tensor emit(const Shape& s, std::vector<float>&& data, std::initializer_list<const Tensor*> ins, const char* op,
            BackFn fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = s;
    impl->data = std::move(data);
    if (any_requires_grad(ins)) {
        impl->requires_grad = true;
        auto node = std::make_shared<Node>();
        node->op = op;
        for (const Tensor* t : ins) {
            if (t->defined()) node->inputs.push_back(t->impl());
        }
        node->backward = std::move(fn);
        impl->node = std::move(node);
    }
    return Tensor(std::move(impl));
}

void check_finite(const Tensor& t, const char* op) {
    if (debug_checks() && !all_finite(t.data())) {
        throw NumericError(std::string("non-finite input to ") + op);
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

// Generic unary elementwise op: forward f(x), backward dy * df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
    check_finite(x, op);
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
    TensorImpl* xi = x.impl().get();
    return emit(x.shape(), std::move(out), {&x}, op, [xi, df](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer();
        for (size_t i = 0; i < o.data.size(); ++i) g[i] += o.grad[i] * df(xi->data[i], o.data[i]);
    });
}

} // namespace

Tensor ew_binary(const Tensor& a, const Tensor& b, BinaryKind kind, float eps) {
    require_same_shape(a, b, "ew_binary");
    check_finite(a, "ew_binary");
    check_finite(b, "ew_binary");
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<float> out(ad.size());
    switch (kind) {
    case BinaryKind::add:
        for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i];
        break;
    case BinaryKind::sub:
        for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] - bd[i];
        break;
    case BinaryKind::mul:
        for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i];
        break;
    case BinaryKind::div:
        for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] / (bd[i] + eps);
        break;
    }
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    return emit(a.shape(), std::move(out), {&a, &b}, "ew_binary", [ai, bi, kind, eps](const TensorImpl& o) {
        const size_t n = o.data.size();
        const float* dy = o.grad.data();
        if (ai->requires_grad) {
            float* g = ai->grad_buffer();
            switch (kind) {
            case BinaryKind::add:
            case BinaryKind::sub:
                for (size_t i = 0; i < n; ++i) g[i] += dy[i];
                break;
            case BinaryKind::mul:
                for (size_t i = 0; i < n; ++i) g[i] += dy[i] * bi->data[i];
                break;
            case BinaryKind::div:
                for (size_t i = 0; i < n; ++i) g[i] += dy[i] / (bi->data[i] + eps);
                break;
            }
        }
        if (bi->requires_grad) {
            float* g = bi->grad_buffer();
            switch (kind) {
            case BinaryKind::add:
                for (size_t i = 0; i < n; ++i) g[i] += dy[i];
                break;
            case BinaryKind::sub:
                for (size_t i = 0; i < n; ++i) g[i] -= dy[i];
                break;
            case BinaryKind::mul:
                for (size_t i = 0; i < n; ++i) g[i] += dy[i] * ai->data[i];
                break;
            case BinaryKind::div:
                for (size_t i = 0; i < n; ++i) {
                    const float den = bi->data[i] + eps;
                    g[i] -= dy[i] * ai->data[i] / (den * den);
                }
                break;
            }
        }
    });
}

Tensor add_scalar(const Tensor& x, float s) {
    return unary(x, "add_scalar", [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& x, float s) {
    return unary(x, "mul_scalar", [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor broadcast_to(const Tensor& x, const Shape& target) {
    const Shape& s = x.shape();
    for (int k = 0; k < 4; ++k) {
        if (s.dims[k] != target.dims[k] && s.dims[k] != 1) {
            throw ShapeError("broadcast_to: cannot expand " + s.str() + " to " + target.str());
        }
    }
    if (s == target) return x;
    // Source offset for each target position.
    std::vector<size_t> src(static_cast<size_t>(target.numel()));
    size_t k = 0;
    for (int64_t n = 0; n < target.n(); ++n) {
        const int64_t sn = s.n() == 1 ? 0 : n;
        for (int64_t c = 0; c < target.c(); ++c) {
            const int64_t sc = s.c() == 1 ? 0 : c;
            for (int64_t y = 0; y < target.h(); ++y) {
                const int64_t sy = s.h() == 1 ? 0 : y;
                for (int64_t xx = 0; xx < target.w(); ++xx) {
                    const int64_t sx = s.w() == 1 ? 0 : xx;
                    src[k++] = static_cast<size_t>(((sn * s.c() + sc) * s.h() + sy) * s.w() + sx);
                }
            }
        }
    }
    std::vector<float> out(src.size());
    const auto& xd = x.data();
    for (size_t i = 0; i < src.size(); ++i) out[i] = xd[src[i]];
    TensorImpl* xi = x.impl().get();
    return emit(target, std::move(out), {&x}, "broadcast_to", [xi, src = std::move(src)](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer();
        for (size_t i = 0; i < src.size(); ++i) g[src[i]] += o.grad[i];
    });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float slope) {
    return unary(
        x, "leaky_relu", [slope](float v) { return v > 0.0f ? v : slope * v; },
        [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid", [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
        [](float, float y) { return y * (1.0f - y); });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, "abs", [](float v) { return std::fabs(v); },
        [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor square(const Tensor& x) {
    return unary(x, "square", [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor smooth_l1(const Tensor& x) {
    return unary(
        x, "smooth_l1", [](float u) { return std::fabs(u) <= 1.0f ? 0.5f * u * u : std::fabs(u) - 0.5f; },
        [](float u, float) { return std::fabs(u) <= 1.0f ? u : (u > 0.0f ? 1.0f : -1.0f); });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
    return unary(
        x, "clamp", [lo, hi](float v) { return std::clamp(v, lo, hi); },
        [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

Tensor clamp_min(const Tensor& x, float floor) {
    return unary(
        x, "clamp_min", [floor](float v) { return std::max(v, floor); },
        [floor](float v, float) { return v > floor ? 1.0f : 0.0f; });
}

Tensor maxpool2x2(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.h() % 2 != 0 || s.w() % 2 != 0) {
        throw ShapeError("maxpool2x2 requires even spatial extents, got " + s.str() + "; pad or resize first");
    }
    const Shape os{s.n(), s.c(), s.h() / 2, s.w() / 2};
    std::vector<float> out(static_cast<size_t>(os.numel()));
    std::vector<uint32_t> arg(out.size());
    const auto& xd = x.data();
    size_t k = 0;
    for (int64_t nc = 0; nc < s.n() * s.c(); ++nc) {
        const size_t base = static_cast<size_t>(nc * s.plane());
        for (int64_t oy = 0; oy < os.h(); ++oy) {
            for (int64_t ox = 0; ox < os.w(); ++ox) {
                const size_t i0 = base + static_cast<size_t>(2 * oy * s.w() + 2 * ox);
                const size_t cand[4] = {i0, i0 + 1, i0 + static_cast<size_t>(s.w()), i0 + static_cast<size_t>(s.w()) + 1};
                size_t best = cand[0];
                for (int q = 1; q < 4; ++q) {
                    if (xd[cand[q]] > xd[best]) best = cand[q];
                }
                out[k] = xd[best];
                arg[k] = static_cast<uint32_t>(best);
                ++k;
            }
        }
    }
    TensorImpl* xi = x.impl().get();
    return emit(os, std::move(out), {&x}, "maxpool2x2", [xi, arg = std::move(arg)](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer();
        for (size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
    });
}

Tensor upsample_nearest2x(const Tensor& x) {
    const Shape& s = x.shape();
    const Shape os{s.n(), s.c(), s.h() * 2, s.w() * 2};
    std::vector<float> out(static_cast<size_t>(os.numel()));
    const auto& xd = x.data();
    for (int64_t nc = 0; nc < s.n() * s.c(); ++nc) {
        const float* src = xd.data() + nc * s.plane();
        float* dst = out.data() + nc * os.plane();
        for (int64_t y = 0; y < os.h(); ++y) {
            for (int64_t xx = 0; xx < os.w(); ++xx) dst[y * os.w() + xx] = src[(y / 2) * s.w() + xx / 2];
        }
    }
    TensorImpl* xi = x.impl().get();
    return emit(os, std::move(out), {&x}, "upsample_nearest2x", [xi, s, os](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer();
        for (int64_t nc = 0; nc < s.n() * s.c(); ++nc) {
            const float* dy = o.grad.data() + nc * os.plane();
            float* dst = g + nc * s.plane();
            for (int64_t y = 0; y < os.h(); ++y) {
                for (int64_t xx = 0; xx < os.w(); ++xx) dst[(y / 2) * s.w() + xx / 2] += dy[y * os.w() + xx];
            }
        }
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w()) {
        throw ShapeError("concat_channels: non-channel extents differ " + sa.str() + " vs " + sb.str());
    }
    const Shape os{sa.n(), sa.c() + sb.c(), sa.h(), sa.w()};
    std::vector<float> out(static_cast<size_t>(os.numel()));
    const int64_t na = sa.c() * sa.plane();
    const int64_t nb = sb.c() * sb.plane();
    for (int64_t n = 0; n < sa.n(); ++n) {
        std::copy_n(a.data().data() + n * na, na, out.data() + n * (na + nb));
        std::copy_n(b.data().data() + n * nb, nb, out.data() + n * (na + nb) + na);
    }
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    return emit(os, std::move(out), {&a, &b}, "concat_channels", [ai, bi, na, nb, batch = sa.n()](const TensorImpl& o) {
        for (int64_t n = 0; n < batch; ++n) {
            const float* dy = o.grad.data() + n * (na + nb);
            if (ai->requires_grad) {
                float* g = ai->grad_buffer() + n * na;
                for (int64_t i = 0; i < na; ++i) g[i] += dy[i];
            }
            if (bi->requires_grad) {
                float* g = bi->grad_buffer() + n * nb;
                for (int64_t i = 0; i < nb; ++i) g[i] += dy[na + i];
            }
        }
    });
}

Tensor slice_channels(const Tensor& x, int64_t begin, int64_t count) {
    const Shape& s = x.shape();
    if (begin < 0 || count <= 0 || begin + count > s.c()) {
        throw ShapeError("slice_channels: range out of bounds for " + s.str());
    }
    const Shape os{s.n(), count, s.h(), s.w()};
    std::vector<float> out(static_cast<size_t>(os.numel()));
    const int64_t chunk = count * s.plane();
    for (int64_t n = 0; n < s.n(); ++n) {
        std::copy_n(x.data().data() + (n * s.c() + begin) * s.plane(), chunk, out.data() + n * chunk);
    }
    TensorImpl* xi = x.impl().get();
    return emit(os, std::move(out), {&x}, "slice_channels", [xi, s, begin, chunk](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer();
        for (int64_t n = 0; n < s.n(); ++n) {
            float* dst = g + (n * s.c() + begin) * s.plane();
            const float* dy = o.grad.data() + n * chunk;
            for (int64_t i = 0; i < chunk; ++i) dst[i] += dy[i];
        }
    });
}

Tensor crop(const Tensor& x, int64_t y0, int64_t x0, int64_t h, int64_t w) {
    const Shape& s = x.shape();
    if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > s.h() || x0 + w > s.w()) {
        throw ShapeError("crop: window out of bounds for " + s.str());
    }
    const Shape os{s.n(), s.c(), h, w};
    std::vector<float> out(static_cast<size_t>(os.numel()));
    for (int64_t nc = 0; nc < s.n() * s.c(); ++nc) {
        for (int64_t y = 0; y < h; ++y) {
            std::copy_n(x.data().data() + nc * s.plane() + (y0 + y) * s.w() + x0, w,
                        out.data() + nc * os.plane() + y * w);
        }
    }
    TensorImpl* xi = x.impl().get();
    return emit(os, std::move(out), {&x}, "crop", [xi, s, os, y0, x0](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer();
        for (int64_t nc = 0; nc < s.n() * s.c(); ++nc) {
            for (int64_t y = 0; y < os.h(); ++y) {
                float* dst = g + nc * s.plane() + (y0 + y) * s.w() + x0;
                const float* dy = o.grad.data() + nc * os.plane() + y * os.w();
                for (int64_t xx = 0; xx < os.w(); ++xx) dst[xx] += dy[xx];
            }
        }
    });
}

Tensor batch_item(const Tensor& x, int64_t index) {
    const Shape& s = x.shape();
    if (index < 0 || index >= s.n()) throw ShapeError("batch_item: index out of range for " + s.str());
    const Shape os{1, s.c(), s.h(), s.w()};
    const int64_t chunk = os.numel();
    std::vector<float> out(x.data().begin() + index * chunk, x.data().begin() + (index + 1) * chunk);
    TensorImpl* xi = x.impl().get();
    return emit(os, std::move(out), {&x}, "batch_item", [xi, index, chunk](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer() + index * chunk;
        for (int64_t i = 0; i < chunk; ++i) g[i] += o.grad[static_cast<size_t>(i)];
    });
}

Tensor concat_batch(const std::vector<Tensor>& items) {
    if (items.empty()) throw ShapeError("concat_batch: empty list");
    const Shape& s0 = items.front().shape();
    int64_t total = 0;
    for (const auto& t : items) {
        const Shape& s = t.shape();
        if (s.c() != s0.c() || s.h() != s0.h() || s.w() != s0.w()) {
            throw ShapeError("concat_batch: extents differ " + s0.str() + " vs " + s.str());
        }
        total += s.n();
    }
    const Shape os{total, s0.c(), s0.h(), s0.w()};
    std::vector<float> out;
    out.reserve(static_cast<size_t>(os.numel()));
    bool needs = false;
    for (const auto& t : items) {
        out.insert(out.end(), t.data().begin(), t.data().end());
        needs = needs || t.requires_grad();
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = os;
    impl->data = std::move(out);
    if (needs && grad_enabled()) {
        impl->requires_grad = true;
        auto node = std::make_shared<Node>();
        node->op = "concat_batch";
        std::vector<TensorImpl*> raw;
        for (const auto& t : items) {
            node->inputs.push_back(t.impl());
            raw.push_back(t.impl().get());
        }
        node->backward = [raw](const TensorImpl& o) {
            size_t off = 0;
            for (TensorImpl* in : raw) {
                const size_t n = in->data.size();
                if (in->requires_grad) {
                    float* g = in->grad_buffer();
                    for (size_t i = 0; i < n; ++i) g[i] += o.grad[off + i];
                }
                off += n;
            }
        };
        impl->node = std::move(node);
    }
    return Tensor(std::move(impl));
}

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    TensorImpl* xi = x.impl().get();
    return emit(Shape{1, 1, 1, 1}, {static_cast<float>(acc)}, {&x}, "sum_all", [xi](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer();
        const float dy = o.grad[0];
        for (size_t i = 0; i < xi->data.size(); ++i) g[i] += dy;
    });
}

Tensor mean_all(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    const double n = static_cast<double>(x.numel());
    TensorImpl* xi = x.impl().get();
    return emit(Shape{1, 1, 1, 1}, {static_cast<float>(acc / n)}, {&x}, "mean_all", [xi, n](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer();
        const float dy = static_cast<float>(o.grad[0] / n);
        for (size_t i = 0; i < xi->data.size(); ++i) g[i] += dy;
    });
}

Tensor mean_per_item(const Tensor& x) {
    const Shape& s = x.shape();
    const int64_t chunk = s.c() * s.plane();
    std::vector<float> out(static_cast<size_t>(s.n()));
    for (int64_t n = 0; n < s.n(); ++n) {
        double acc = 0.0;
        for (int64_t i = 0; i < chunk; ++i) acc += x.data()[static_cast<size_t>(n * chunk + i)];
        out[static_cast<size_t>(n)] = static_cast<float>(acc / static_cast<double>(chunk));
    }
    TensorImpl* xi = x.impl().get();
    return emit(Shape{s.n(), 1, 1, 1}, std::move(out), {&x}, "mean_per_item", [xi, chunk](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        float* g = xi->grad_buffer();
        for (size_t n = 0; n < o.data.size(); ++n) {
            const float dy = o.grad[n] / static_cast<float>(chunk);
            for (int64_t i = 0; i < chunk; ++i) g[n * static_cast<size_t>(chunk) + static_cast<size_t>(i)] += dy;
        }
    });
}

namespace {

// Valid output range [lo, hi) along one axis for kernel tap k.
inline void tap_range(int64_t k, int64_t pad, int64_t stride, int64_t in_extent, int64_t out_extent, int64_t& lo,
                      int64_t& hi) {
    // need 0 <= o*stride + k - pad < in_extent
    const int64_t off = k - pad;
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    const int64_t last = in_extent - 1 - off; // o*stride <= last
    hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
}

} // namespace

Tensor conv2d(const Tensor& x, const Conv2dParams& p, int stride, int pad) {
    const Shape& s = x.shape();
    const Shape& ws = p.weight.shape();
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: stride must be >= 1 and pad >= 0");
    if (ws.c() != s.c()) {
        throw ShapeError("conv2d: input has " + std::to_string(s.c()) + " channels, weight expects " +
                         std::to_string(ws.c()));
    }
    if (p.bias.defined() && p.bias.numel() != ws.n()) throw ShapeError("conv2d: bias length mismatch");
    const int64_t cout = ws.n(), cin = ws.c(), kh = ws.h(), kw = ws.w();
    const int64_t oh = (s.h() + 2 * pad - kh) / stride + 1;
    const int64_t ow = (s.w() + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel larger than padded input " + s.str());
    const Shape os{s.n(), cout, oh, ow};
    std::vector<float> out(static_cast<size_t>(os.numel()));
    const float* xd = x.data().data();
    const float* wd = p.weight.data().data();
    const float* bd = p.bias.defined() ? p.bias.data().data() : nullptr;

    parallel_for(s.n() * cout, [&](int64_t job) {
        const int64_t n = job / cout, co = job % cout;
        thread_local std::vector<double> acc;
        acc.assign(static_cast<size_t>(oh * ow), bd ? static_cast<double>(bd[co]) : 0.0);
        double* dst = acc.data();
        for (int64_t ci = 0; ci < cin; ++ci) {
            const float* src = xd + (n * cin + ci) * s.plane();
            for (int64_t ky = 0; ky < kh; ++ky) {
                int64_t ylo, yhi;
                tap_range(ky, pad, stride, s.h(), oh, ylo, yhi);
                for (int64_t kx = 0; kx < kw; ++kx) {
                    int64_t xlo, xhi;
                    tap_range(kx, pad, stride, s.w(), ow, xlo, xhi);
                    const double wv = wd[((co * cin + ci) * kh + ky) * kw + kx];
                    for (int64_t oy = ylo; oy < yhi; ++oy) {
                        const float* row = src + (oy * stride + ky - pad) * s.w() + (kx - pad);
                        double* orow = dst + oy * ow;
                        if (stride == 1) {
                            for (int64_t ox = xlo; ox < xhi; ++ox) orow[ox] += wv * row[ox];
                        } else {
                            for (int64_t ox = xlo; ox < xhi; ++ox) orow[ox] += wv * row[ox * stride];
                        }
                    }
                }
            }
        }
        std::copy(acc.begin(), acc.end(), out.begin() + (n * cout + co) * oh * ow);
    });

    TensorImpl* xi = x.impl().get();
    TensorImpl* wi = p.weight.impl().get();
    TensorImpl* bi = p.bias.defined() ? p.bias.impl().get() : nullptr;
    return emit(os, std::move(out), {&x, &p.weight, &p.bias}, "conv2d",
                [xi, wi, bi, s, os, cout, cin, kh, kw, stride, pad](const TensorImpl& o) {
        const float* dy = o.grad.data();
        const int64_t oh = os.h(), ow = os.w();
        if (bi && bi->requires_grad) {
            float* gb = bi->grad_buffer();
            for (int64_t co = 0; co < cout; ++co) {
                double acc = 0.0;
                for (int64_t n = 0; n < s.n(); ++n) {
                    const float* g = dy + (n * cout + co) * oh * ow;
                    for (int64_t i = 0; i < oh * ow; ++i) acc += g[i];
                }
                gb[co] += static_cast<float>(acc);
            }
        }
        if (wi->requires_grad) {
            float* gw = wi->grad_buffer();
            parallel_for(cout, [&](int64_t co) {
                for (int64_t ci = 0; ci < cin; ++ci) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        int64_t ylo, yhi;
                        tap_range(ky, pad, stride, s.h(), oh, ylo, yhi);
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            int64_t xlo, xhi;
                            tap_range(kx, pad, stride, s.w(), ow, xlo, xhi);
                            double acc = 0.0;
                            for (int64_t n = 0; n < s.n(); ++n) {
                                const float* src = xi->data.data() + (n * cin + ci) * s.plane();
                                const float* g = dy + (n * cout + co) * oh * ow;
                                for (int64_t oy = ylo; oy < yhi; ++oy) {
                                    const float* row = src + (oy * stride + ky - pad) * s.w() + (kx - pad);
                                    const float* grow = g + oy * ow;
                                    float part = 0.0f;
                                    for (int64_t ox = xlo; ox < xhi; ++ox) part += grow[ox] * row[ox * stride];
                                    acc += part;
                                }
                            }
                            gw[((co * cin + ci) * kh + ky) * kw + kx] += static_cast<float>(acc);
                        }
                    }
                }
            });
        }
        if (xi->requires_grad) {
            float* gx = xi->grad_buffer();
            const float* wd = wi->data.data();
            parallel_for(s.n() * cin, [&](int64_t job) {
                const int64_t n = job / cin, ci = job % cin;
                float* dst = gx + (n * cin + ci) * s.plane();
                for (int64_t co = 0; co < cout; ++co) {
                    const float* g = dy + (n * cout + co) * oh * ow;
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        int64_t ylo, yhi;
                        tap_range(ky, pad, stride, s.h(), oh, ylo, yhi);
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            int64_t xlo, xhi;
                            tap_range(kx, pad, stride, s.w(), ow, xlo, xhi);
                            const float wv = wd[((co * cin + ci) * kh + ky) * kw + kx];
                            for (int64_t oy = ylo; oy < yhi; ++oy) {
                                float* row = dst + (oy * stride + ky - pad) * s.w() + (kx - pad);
                                const float* grow = g + oy * ow;
                                if (stride == 1) {
                                    for (int64_t ox = xlo; ox < xhi; ++ox) row[ox] += wv * grow[ox];
                                } else {
                                    for (int64_t ox = xlo; ox < xhi; ++ox) row[ox * stride] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            });
        }
    });
}

BatchNormParams BatchNormParams::make(int64_t channels) {
    BatchNormParams p;
    p.gamma = Tensor::full(Shape{1, channels, 1, 1}, 1.0f, true);
    p.beta = Tensor::zeros(Shape{1, channels, 1, 1}, true);
    p.running_mean.assign(static_cast<size_t>(channels), 0.0f);
    p.running_var.assign(static_cast<size_t>(channels), 1.0f);
    return p;
}

Tensor batchnorm2d(const Tensor& x, BatchNormParams& p, bool training) {
    const Shape& s = x.shape();
    const int64_t C = s.c();
    if (p.gamma.numel() != C || p.beta.numel() != C || static_cast<int64_t>(p.running_mean.size()) != C ||
        static_cast<int64_t>(p.running_var.size()) != C) {
        throw ShapeError("batchnorm2d: parameter length does not match " + std::to_string(C) + " channels");
    }
    check_finite(x, "batchnorm2d");
    const int64_t M = s.n() * s.plane();
    const float* xd = x.data().data();
    std::vector<float> mean(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
        if (training) {
            double sum = 0.0, sq = 0.0;
            for (int64_t n = 0; n < s.n(); ++n) {
                const float* src = xd + (n * C + c) * s.plane();
                for (int64_t i = 0; i < s.plane(); ++i) sum += src[i];
            }
            const double mu = sum / static_cast<double>(M);
            for (int64_t n = 0; n < s.n(); ++n) {
                const float* src = xd + (n * C + c) * s.plane();
                for (int64_t i = 0; i < s.plane(); ++i) sq += (src[i] - mu) * (src[i] - mu);
            }
            const double var = sq / static_cast<double>(M);
            mean[c] = static_cast<float>(mu);
            inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + p.eps));
            const double unbiased = M > 1 ? sq / static_cast<double>(M - 1) : var;
            p.running_mean[c] = static_cast<float>((1.0 - p.momentum) * p.running_mean[c] + p.momentum * mu);
            p.running_var[c] = static_cast<float>((1.0 - p.momentum) * p.running_var[c] + p.momentum * unbiased);
        } else {
            mean[c] = p.running_mean[c];
            inv_std[c] = 1.0f / std::sqrt(p.running_var[c] + p.eps);
        }
    }
    std::vector<float> out(static_cast<size_t>(s.numel()));
    std::vector<float> xhat(out.size());
    const float* gd = p.gamma.data().data();
    const float* bd = p.beta.data().data();
    for (int64_t n = 0; n < s.n(); ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const int64_t off = (n * C + c) * s.plane();
            for (int64_t i = 0; i < s.plane(); ++i) {
                const float xh = (xd[off + i] - mean[c]) * inv_std[c];
                xhat[off + i] = xh;
                out[off + i] = gd[c] * xh + bd[c];
            }
        }
    }
    TensorImpl* xi = x.impl().get();
    TensorImpl* gi = p.gamma.impl().get();
    TensorImpl* bi = p.beta.impl().get();
    return emit(s, std::move(out), {&x, &p.gamma, &p.beta}, "batchnorm2d",
                [xi, gi, bi, s, C, M, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorImpl& o) {
        const float* dy = o.grad.data();
        std::vector<double> sum_dy(static_cast<size_t>(C), 0.0), sum_dy_xhat(static_cast<size_t>(C), 0.0);
        for (int64_t n = 0; n < s.n(); ++n) {
            for (int64_t c = 0; c < C; ++c) {
                const int64_t off = (n * C + c) * s.plane();
                for (int64_t i = 0; i < s.plane(); ++i) {
                    sum_dy[c] += dy[off + i];
                    sum_dy_xhat[c] += dy[off + i] * xhat[off + i];
                }
            }
        }
        if (gi->requires_grad) {
            float* g = gi->grad_buffer();
            for (int64_t c = 0; c < C; ++c) g[c] += static_cast<float>(sum_dy_xhat[c]);
        }
        if (bi->requires_grad) {
            float* g = bi->grad_buffer();
            for (int64_t c = 0; c < C; ++c) g[c] += static_cast<float>(sum_dy[c]);
        }
        if (!xi->requires_grad) return;
        float* gx = xi->grad_buffer();
        const float* gamma = gi->data.data();
        for (int64_t n = 0; n < s.n(); ++n) {
            for (int64_t c = 0; c < C; ++c) {
                const int64_t off = (n * C + c) * s.plane();
                const float scale = gamma[c] * inv_std[c];
                if (training) {
                    const float mdy = static_cast<float>(sum_dy[c] / static_cast<double>(M));
                    const float mdyx = static_cast<float>(sum_dy_xhat[c] / static_cast<double>(M));
                    for (int64_t i = 0; i < s.plane(); ++i) {
                        gx[off + i] += scale * (dy[off + i] - mdy - xhat[off + i] * mdyx);
                    }
                } else {
                    for (int64_t i = 0; i < s.plane(); ++i) gx[off + i] += scale * dy[off + i];
                }
            }
        }
    });
}

} // namespace csd
