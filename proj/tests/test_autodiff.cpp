#include "csd/ops.hpp"
#include "csd/optim.hpp"
#include "csd/rng.hpp"
#include "csd/tensor.hpp"
#include "csd/tensor_io.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

using namespace csd;

namespace {

Tensor param(const Shape& s, std::vector<float> v) { return Tensor::from(s, std::move(v), true); }

Tensor random(const Shape& s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng r(seed);
    std::vector<float> v(static_cast<size_t>(s.numel()));
    for (auto& x : v) x = static_cast<float>(r.uniform(lo, hi));
    return Tensor::from(s, v);
}

} // namespace

TEST_SUITE("autodiff") {

TEST_CASE("tensor construction validates extents") {
    CHECK_THROWS_AS(Tensor::zeros(Shape{1, 0, 2, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor::from(Shape{1, 1, 2, 2}, {1.0f, 2.0f}), ShapeError);
    const Tensor t = Tensor::full(Shape{2, 3, 4, 5}, 1.5f);
    CHECK(t.numel() == 120);
    CHECK(t.data().size() == 120);
    CHECK_FALSE(t.has_grad());
}

TEST_CASE("elementwise examples") {
    const Tensor a = Tensor::from(Shape{1, 1, 1, 2}, {4.0f, 9.0f});
    const Tensor b = Tensor::from(Shape{1, 1, 1, 2}, {2.0f, 3.0f});
    const Tensor q = div(a, b);
    CHECK(q.data()[0] == doctest::Approx(2.0).epsilon(1e-4));
    CHECK(q.data()[1] == doctest::Approx(3.0).epsilon(1e-4));
    CHECK(add(a, b).data()[1] == 12.0f);
    CHECK(sub(a, b).data()[0] == 2.0f);
    CHECK(mul(a, b).data()[1] == 27.0f);
    CHECK_THROWS_AS(add(a, Tensor::zeros(Shape{1, 1, 2, 1})), ShapeError);
}

TEST_CASE("division by ones stays within 2 eps") {
    const Tensor f = random(Shape{2, 4, 8, 8}, 3, 0.0, 1.0);
    const Tensor q = div(f, Tensor::ones_like(f));
    for (size_t i = 0; i < f.data().size(); ++i) {
        const float x = f.data()[i];
        CHECK(std::abs(q.data()[i] - x) <= 2 * kDivEps * std::abs(x) + 1e-7f);
    }
}

TEST_CASE("debug checks reject non-finite input") {
    const Tensor a = Tensor::from(Shape{1, 1, 1, 2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    const Tensor b = Tensor::full(Shape{1, 1, 1, 2}, 1.0f);
    set_debug_checks(true);
    CHECK_THROWS_AS(add(a, b), NumericError);
    set_debug_checks(false);
    CHECK_NOTHROW(add(a, b));
}

TEST_CASE("relu and maxpool examples") {
    const Tensor r = relu(Tensor::from(Shape{1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f}));
    CHECK(r.data()[0] == 0.0f);
    CHECK(r.data()[1] == 0.0f);
    CHECK(r.data()[2] == 2.0f);

    Tensor x = param(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor m = maxpool2x2(x);
    CHECK(m.numel() == 1);
    CHECK(m.item() == 4.0f);
    backward(sum_all(m));
    CHECK(x.grad()[3] == 1.0f);
    CHECK(x.grad()[0] + x.grad()[1] + x.grad()[2] == 0.0f);

    CHECK_THROWS_AS(maxpool2x2(Tensor::zeros(Shape{1, 1, 3, 4})), ShapeError);
}

TEST_CASE("maxpool ties go to the first maximum") {
    Tensor x = param(Shape{1, 1, 2, 2}, {5, 5, 5, 5});
    backward(sum_all(maxpool2x2(x)));
    CHECK(x.grad()[0] == 1.0f);
    CHECK(x.grad()[1] == 0.0f);
    CHECK(x.grad()[3] == 0.0f);
}

TEST_CASE("upsample then maxpool is the identity") {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const Tensor x = random(Shape{2, 3, 4, 6}, seed);
        const Tensor y = maxpool2x2(upsample_nearest2x(x));
        REQUIRE(y.shape() == x.shape());
        for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
    }
}

TEST_CASE("upsample backward sums each 2x2 block") {
    Tensor x = param(Shape{1, 1, 1, 1}, {0.3f});
    backward(sum_all(upsample_nearest2x(x)));
    CHECK(x.grad()[0] == 4.0f);
}

TEST_CASE("concat requires matching extents") {
    const Tensor a = Tensor::zeros(Shape{1, 2, 4, 4});
    CHECK(concat_channels(a, Tensor::zeros(Shape{1, 3, 4, 4})).shape() == Shape{1, 5, 4, 4});
    CHECK_THROWS_AS(concat_channels(a, Tensor::zeros(Shape{1, 2, 4, 2})), ShapeError);
}

TEST_CASE("mean of squares gradient") {
    Tensor x = param(Shape{1, 1, 1, 2}, {1, 2});
    backward(mean_all(square(x)));
    CHECK(x.grad()[0] == doctest::Approx(1.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("leaf gradients accumulate across backward calls") {
    Tensor x = param(Shape{1, 1, 1, 2}, {1, 2});
    backward(mean_all(square(x)));
    backward(mean_all(square(x)));
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("a loss that does not depend on a leaf leaves it without gradient") {
    Tensor x = param(Shape{1, 1, 1, 2}, {1, 2});
    Tensor y = param(Shape{1, 1, 1, 2}, {3, 4});
    backward(mean_all(square(y)));
    CHECK_FALSE(x.has_grad());
    backward(add(mean_all(y), mean_all(x.detach())));
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("tensors without requires_grad never receive gradient") {
    Tensor w = param(Shape{1, 1, 1, 2}, {1, 2});
    const Tensor c = Tensor::from(Shape{1, 1, 1, 2}, {3, 4});
    backward(sum_all(mul(w, c)));
    CHECK_FALSE(c.has_grad());
    CHECK(w.grad()[1] == 4.0f);
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor x = param(Shape{1, 1, 1, 2}, {1, 2});
    CHECK_THROWS_AS(backward(square(x)), ShapeError);
}

TEST_CASE("tape replay gives identical gradients") {
    Tensor w = Tensor::from(Shape{4, 3, 3, 3}, std::vector<float>(108), true);
    {
        Rng r(9);
        for (auto& v : w.data()) v = static_cast<float>(r.uniform(-0.5, 0.5));
    }
    const Tensor x = random(Shape{2, 3, 8, 8}, 4);
    const Tensor loss = mean_all(square(relu(conv2d(x, Conv2dParams{w, {}}))));
    backward(loss);
    const std::vector<float> first(w.grad().begin(), w.grad().end());
    w.zero_grad();
    backward(loss);
    const std::vector<float> second(w.grad().begin(), w.grad().end());
    CHECK(first == second);
    CHECK(tape_size(loss) > 0);
}

TEST_CASE("no-grad guard skips recording") {
    Tensor x = param(Shape{1, 1, 1, 2}, {1, 2});
    Tensor y;
    {
        NoGradGuard g;
        CHECK_FALSE(grad_enabled());
        y = square(x);
    }
    CHECK(grad_enabled());
    CHECK_FALSE(y.requires_grad());
    CHECK(tape_size(mean_all(y)) <= 1);
}

TEST_CASE("forward is deterministic") {
    const Tensor x = random(Shape{2, 3, 8, 8}, 11);
    const Tensor w = random(Shape{5, 3, 3, 3}, 12);
    const Tensor a = conv2d(x, Conv2dParams{w, {}});
    const Tensor b = conv2d(x, Conv2dParams{w, {}});
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("conv2d examples") {
    SUBCASE("identity kernel") {
        std::vector<float> k(9, 0.0f);
        k[4] = 1.0f;
        const Tensor x = random(Shape{1, 1, 3, 3}, 2);
        const Tensor y = conv2d(x, Conv2dParams{Tensor::from(Shape{1, 1, 3, 3}, k), {}}, 1, 1);
        REQUIRE(y.shape() == x.shape());
        for (size_t i = 0; i < 9; ++i) CHECK(y.data()[i] == x.data()[i]);
    }
    SUBCASE("all-ones kernel without padding") {
        const Tensor y = conv2d(Tensor::full(Shape{1, 1, 4, 4}, 1.0f),
                                Conv2dParams{Tensor::full(Shape{1, 1, 3, 3}, 1.0f), {}}, 1, 0);
        REQUIRE(y.shape() == Shape{1, 1, 2, 2});
        for (float v : y.data()) CHECK(v == 9.0f);
    }
    SUBCASE("output extents") {
        const Tensor x = Tensor::zeros(Shape{1, 2, 9, 7});
        CHECK(conv2d(x, Conv2dParams{Tensor::zeros(Shape{3, 2, 4, 4}), {}}, 2, 1).shape() == Shape{1, 3, 4, 3});
        CHECK(conv2d(x, Conv2dParams{Tensor::zeros(Shape{3, 2, 1, 1}), {}}, 1, 0).shape() == Shape{1, 3, 9, 7});
    }
    SUBCASE("channel mismatch") {
        CHECK_THROWS_AS(conv2d(Tensor::zeros(Shape{1, 2, 4, 4}), Conv2dParams{Tensor::zeros(Shape{1, 3, 3, 3}), {}}),
                        ShapeError);
    }
}

TEST_CASE("batchnorm") {
    SUBCASE("eval mode with unit statistics is the identity") {
        BatchNormParams p = BatchNormParams::make(3);
        const Tensor x = random(Shape{2, 3, 4, 4}, 5);
        const Tensor y = batchnorm2d(x, p, false);
        for (size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-5));
    }
    SUBCASE("training mode normalizes each channel") {
        BatchNormParams p = BatchNormParams::make(3);
        const Tensor x = random(Shape{4, 3, 5, 5}, 6, -3.0, 7.0);
        const Tensor y = batchnorm2d(x, p, true);
        const auto& s = y.shape();
        for (int64_t c = 0; c < s.c(); ++c) {
            double sum = 0, sq = 0;
            int64_t n = 0;
            for (int64_t b = 0; b < s.n(); ++b)
                for (int64_t i = 0; i < s.h(); ++i)
                    for (int64_t j = 0; j < s.w(); ++j) {
                        const double v = y.at(b, c, i, j);
                        sum += v;
                        sq += v * v;
                        ++n;
                    }
            const double mean = sum / n;
            CHECK(std::abs(mean) < 1e-4);
            CHECK(std::abs(sq / n - mean * mean - 1.0) < 1e-3);
        }
        // Running estimates moved toward the batch statistics.
        CHECK(p.running_mean[0] != 0.0f);
        for (float v : p.running_var) CHECK(v > 0.0f);
    }
    SUBCASE("single element per channel does not fail") {
        BatchNormParams p = BatchNormParams::make(2);
        const Tensor y = batchnorm2d(Tensor::from(Shape{1, 2, 1, 1}, {0.5f, -2.0f}), p, true);
        for (float v : y.data()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("optimizer examples") {
    SUBCASE("sgd single step") {
        std::vector<Tensor> ps{param(Shape{1, 1, 1, 1}, {1.0f})};
        ps[0].grad_mut()[0] = 2.0f;
        OptState st;
        optimizer_step(ps, st, OptimizerConfig{OptimizerKind::sgd, 0.1f});
        CHECK(ps[0].data()[0] == doctest::Approx(0.8));
    }
    SUBCASE("sgd with zero gradient is a no-op") {
        std::vector<Tensor> ps{param(Shape{1, 1, 1, 2}, {1.0f, -3.0f})};
        ps[0].grad_mut();
        OptState st;
        optimizer_step(ps, st, OptimizerConfig{OptimizerKind::sgd, 0.1f});
        CHECK(ps[0].data()[0] == 1.0f);
        CHECK(ps[0].data()[1] == -3.0f);
    }
    SUBCASE("first adam step moves by lr regardless of gradient size") {
        for (float g : {1e-3f, 1.0f, 250.0f, -7.0f}) {
            std::vector<Tensor> ps{param(Shape{1, 1, 1, 1}, {0.5f})};
            ps[0].grad_mut()[0] = g;
            OptState st;
            const OptimizerConfig cfg{OptimizerKind::adam, 1e-2f};
            optimizer_step(ps, st, cfg);
            CHECK(std::abs(ps[0].data()[0] - 0.5f) == doctest::Approx(1e-2).epsilon(1e-3));
            CHECK((ps[0].data()[0] < 0.5f) == (g > 0));
        }
    }
    SUBCASE("parameters without gradient are untouched") {
        std::vector<Tensor> ps{param(Shape{1, 1, 1, 1}, {0.5f}), param(Shape{1, 1, 1, 1}, {0.25f})};
        ps[0].grad_mut()[0] = 1.0f;
        OptState st;
        optimizer_step(ps, st, OptimizerConfig{});
        CHECK(ps[1].data()[0] == 0.25f);
        CHECK(ps[0].data()[0] != 0.5f);
    }
    CHECK(parse_optimizer_kind("adam") == OptimizerKind::adam);
    CHECK(to_string(OptimizerKind::sgd) == "sgd");
}

TEST_CASE("raw tensor dump round trip") {
    const Tensor t = random(Shape{2, 3, 4, 5}, 13);
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "CSDT");
    const Tensor u = read_tensor(ss);
    CHECK(u.shape() == t.shape());
    CHECK(std::equal(t.data().begin(), t.data().end(), u.data().begin()));

    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_tensor(truncated), FormatError);
    std::stringstream bad("XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(read_tensor(bad), FormatError);
}

TEST_CASE("lower-rank dumps are left-padded") {
    std::stringstream ss;
    const std::vector<float> v{1, 2, 3, 4, 5, 6};
    write_tensor(ss, v, {2, 3});
    const Tensor t = read_tensor(ss);
    CHECK(t.shape() == Shape{1, 1, 2, 3});
    CHECK(t.data()[5] == 6.0f);
}

}
