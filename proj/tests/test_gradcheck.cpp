#include "gradcheck.hpp"

#include <doctest.h>

TEST_SUITE("gradcheck") {

TEST_CASE("every differentiable op matches central differences") {
    for (const auto& c : gradcheck::all_cases()) {
        SUBCASE(c.name.c_str()) {
            for (uint64_t seed = 1; seed <= 20; ++seed) {
                auto [f, inputs] = c.make(seed);
                const auto r = gradcheck::check(f, inputs, seed, c.kinked, c.magnitude);
                INFO(c.name << " seed " << seed << " worst " << r.worst << " " << r.detail);
                CHECK(r.ok);
            }
        }
    }
}

TEST_CASE("div gradient at a=1, b=2") {
    using namespace csd;
    Tensor a = gradcheck::leaf(Shape{1, 1, 1, 1}, {1.0f});
    Tensor b = gradcheck::leaf(Shape{1, 1, 1, 1}, {2.0f});
    backward(sum_all(div(a, b)));
    CHECK(b.grad()[0] == doctest::Approx(-0.25).epsilon(1e-3));
    CHECK(a.grad()[0] == doctest::Approx(0.5).epsilon(1e-3));
}

}
