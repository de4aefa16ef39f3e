#include "csd/losses.hpp"
#include "csd/retinex.hpp"
#include "csd/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace csd;

namespace {

Tensor random(const Shape& s, uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng r(seed);
    std::vector<float> v(static_cast<size_t>(s.numel()));
    for (auto& x : v) x = static_cast<float>(r.uniform(lo, hi));
    return Tensor::from(s, v);
}

Tensor shifted(const Tensor& t, float c) {
    std::vector<float> v(t.data().begin(), t.data().end());
    for (auto& x : v) x += c;
    return Tensor::from(t.shape(), v);
}

// Scorer returning a constant map per input.
Scorer constant_scorer(float value) {
    return [value](const Tensor& x) { return Tensor::full(Shape{x.shape().n(), 1, 2, 2}, value); };
}

} // namespace

TEST_SUITE("losses") {

TEST_CASE("mse") {
    const Tensor a = random(Shape{2, 3, 4, 4}, 1);
    CHECK(mse_loss(a, a).item() == 0.0f);
    CHECK(mse_loss(shifted(a, 0.5f), a).item() == doctest::Approx(0.25).epsilon(1e-5));
    CHECK_THROWS_AS(mse_loss(a, random(Shape{2, 3, 4, 2}, 2)), ShapeError);

    Tensor out = Tensor::from(a.shape(), std::vector<float>(a.data().begin(), a.data().end()), true);
    const Tensor gt = random(a.shape(), 3);
    backward(mse_loss(out, gt));
    const double n = static_cast<double>(a.numel());
    for (size_t i = 0; i < gt.data().size(); ++i)
        CHECK(out.grad()[i] == doctest::Approx(2.0 * (a.data()[i] - gt.data()[i]) / n).epsilon(1e-4));
}

TEST_CASE("perceptual") {
    const FeatureExtractor fe(7);
    const Tensor a = random(Shape{2, 3, 32, 32}, 4);
    const Tensor b = random(Shape{2, 3, 32, 32}, 5);
    CHECK(perceptual_loss(a, a, fe).item() == 0.0f);
    CHECK(perceptual_loss(a, b, fe).item() == perceptual_loss(b, a, fe).item());
    for (uint64_t s = 1; s <= 5; ++s) {
        const FeatureExtractor f(s);
        CHECK(perceptual_loss(a, b, f).item() > 0.0f);
    }
    CHECK(fe.forward(a).shape() == Shape{2, fe.out_channels(), 2, 2});
    CHECK(fe.downscale() == 16);
}

TEST_CASE("feature extractor weights round trip through a file") {
    const FeatureExtractor fe(11);
    const auto path = std::filesystem::temp_directory_path() / "csd_fe_roundtrip.csdt";
    fe.save(path);
    const FeatureExtractor back = FeatureExtractor::from_file(path);
    std::filesystem::remove(path);
    const Tensor x = random(Shape{1, 3, 16, 16}, 6);
    const Tensor a = fe.forward(x), b = back.forward(x);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("smooth l1 illumination term") {
    const Shape s{1, 1, 1, 1};
    const Tensor zero = Tensor::full(s, 0.0f);
    CHECK(smooth_l1_illum(zero, zero).item() == 0.0f);
    CHECK(smooth_l1_illum(Tensor::full(s, 0.5f), zero).item() == doctest::Approx(0.125));
    CHECK(smooth_l1_illum(Tensor::full(s, 2.0f), zero).item() == doctest::Approx(1.5));
    CHECK(smooth_l1_illum(Tensor::full(s, -2.0f), zero).item() == doctest::Approx(1.5));
}

TEST_CASE("paired objective") {
    const FeatureExtractor fe(3);
    const Tensor low = random(Shape{2, 3, 16, 16}, 7);
    const Tensor gt = random(Shape{2, 3, 16, 16}, 8);
    ForwardResult r;
    r.enhanced = random(gt.shape(), 9);
    r.reflectance = r.enhanced;
    r.illumination = random(Shape{2, 1, 16, 16}, 10);
    r.gray = to_grayscale(low);

    SUBCASE("fixed point") {
        ForwardResult exact = r;
        exact.enhanced = gt;
        exact.illumination = r.gray;
        CHECK(csdnet_loss(exact, low, gt, fe, LossWeights{}, Connection::csd).total.item() == 0.0f);
    }
    SUBCASE("mse-only weights") {
        LossWeights w{1, 0, 0, 0, 0};
        CHECK(csdnet_loss(r, low, gt, fe, w, Connection::csd).total.item() == mse_loss(r.enhanced, gt).item());
    }
    SUBCASE("total is the sum of its terms") {
        const LossWeights w{0.7f, 1.3f, 0.4f, 1.0f, 2.0f};
        for (Connection c : {Connection::csd, Connection::reconstruction_loss}) {
            const LossTerms t = csdnet_loss(r, low, gt, fe, w, c);
            double sum = w.w_mse * double(mse_loss(r.enhanced, gt).item()) +
                         w.w_perc * double(perceptual_loss(r.enhanced, gt, fe).item()) +
                         w.w_smooth * double(smooth_l1_illum(r.illumination, r.gray).item());
            if (c == Connection::reconstruction_loss)
                sum += w.w_recon * double(reconstruction_loss(low, r.reflectance, r.illumination).item());
            else
                CHECK_FALSE(t.recon.defined());
            CHECK(std::abs(t.total.item() - sum) < 1e-6);
            CHECK(t.total.item() >= 0.0f);
        }
    }
}

TEST_CASE("relativistic losses") {
    SUBCASE("constant one half") {
        const Tensor s = Tensor::full(Shape{4, 1, 3, 3}, 0.5f);
        const AdvLosses l = relativistic_losses(s, s);
        CHECK(l.d_loss.item() == 1.0f);
        CHECK(l.g_loss.item() == 1.0f);
    }
    SUBCASE("real one, fake zero") {
        // Each d-term is a squared relativistic gap: (1 - 0 - 1)^2 + (0 - 1)^2.
        const AdvLosses l =
            relativistic_losses(Tensor::full(Shape{3, 1, 2, 2}, 1.0f), Tensor::full(Shape{3, 1, 2, 2}, 0.0f));
        CHECK(l.d_loss.item() == doctest::Approx(1.0));
        CHECK(l.g_loss.item() == doctest::Approx(5.0));
    }
    SUBCASE("shift invariance and label swap") {
        for (uint64_t seed = 1; seed <= 10; ++seed) {
            const Tensor real = random(Shape{4, 1, 3, 3}, seed, -2, 2);
            const Tensor fake = random(Shape{4, 1, 3, 3}, seed + 50, -2, 2);
            const AdvLosses base = relativistic_losses(real, fake);
            const float c = static_cast<float>(seed) * 0.37f - 2.0f;
            const AdvLosses moved = relativistic_losses(shifted(real, c), shifted(fake, c));
            CHECK(std::abs(base.d_loss.item() - moved.d_loss.item()) < 1e-6 * (1 + std::abs(base.d_loss.item())));
            CHECK(std::abs(base.g_loss.item() - moved.g_loss.item()) < 1e-6 * (1 + std::abs(base.g_loss.item())));
            const AdvLosses swapped = relativistic_losses(fake, real);
            CHECK(swapped.d_loss.item() == doctest::Approx(base.g_loss.item()).epsilon(1e-6));
            CHECK(swapped.g_loss.item() == doctest::Approx(base.d_loss.item()).epsilon(1e-6));
            CHECK(base.d_loss.item() >= 0.0f);
            CHECK(base.g_loss.item() >= 0.0f);
        }
    }
}

TEST_CASE("global plus local adversarial losses") {
    AdvBatch b;
    b.real_images = random(Shape{2, 3, 32, 32}, 1);
    b.fake_images = random(Shape{2, 3, 32, 32}, 2);
    for (int k = 0; k < 3; ++k) {
        b.real_patches.push_back(random(Shape{2, 3, 16, 16}, 10 + k));
        b.fake_patches.push_back(random(Shape{2, 3, 16, 16}, 20 + k));
    }
    const AdvLosses l = adversarial_losses(constant_scorer(0.5f), b);
    CHECK(l.d_loss.item() == 2.0f);
    CHECK(l.g_loss.item() == 2.0f);

    AdvBatch global_only = b;
    global_only.real_patches.clear();
    global_only.fake_patches.clear();
    CHECK(adversarial_losses(constant_scorer(0.5f), global_only).d_loss.item() == 1.0f);

    AdvBatch uneven = b;
    uneven.fake_patches.pop_back();
    CHECK_THROWS(adversarial_losses(constant_scorer(0.5f), uneven));
    CHECK_THROWS(adversarial_losses(constant_scorer(0.5f), AdvBatch{}));
}

TEST_CASE("adversarial objective with a real discriminator is shift invariant") {
    const PatchDiscriminator d(DiscriminatorConfig{}, 5);
    AdvBatch b;
    b.real_images = random(Shape{2, 3, 32, 32}, 3);
    b.fake_images = random(Shape{2, 3, 32, 32}, 4);
    b.real_patches.push_back(random(Shape{2, 3, 16, 16}, 5));
    b.fake_patches.push_back(random(Shape{2, 3, 16, 16}, 6));
    const Scorer plain = [&](const Tensor& x) { return d.forward(x); };
    const Scorer moved = [&](const Tensor& x) { return add_scalar(d.forward(x), 3.25f); };
    const AdvLosses a = adversarial_losses(plain, b), m = adversarial_losses(moved, b);
    CHECK(std::abs(a.d_loss.item() - m.d_loss.item()) < 1e-5);
    CHECK(std::abs(a.g_loss.item() - m.g_loss.item()) < 1e-5);
}

TEST_CASE("unpaired objective") {
    const FeatureExtractor fe(9);
    const Tensor low = random(Shape{2, 3, 16, 16}, 11);
    ForwardResult r;
    r.enhanced = low;
    r.reflectance = low;
    r.illumination = random(Shape{2, 1, 16, 16}, 12);
    r.gray = to_grayscale(low);
    const Tensor g = Tensor::scalar(0.8f);
    CHECK(csdgan_loss(r, low, fe, g, LossWeights{1, 1, 0, 0, 1}).total.item() == 0.0f);

    r.enhanced = random(low.shape(), 13);
    const LossWeights w{1.0f, 0.5f, 2.0f, 1.5f, 1.0f};
    const LossTerms t = csdgan_loss(r, low, fe, g, w);
    const double sum = w.w_adv * 0.8 + w.w_perc * double(perceptual_loss(low, r.enhanced, fe).item()) +
                       w.w_smooth * double(smooth_l1_illum(r.illumination, r.gray).item());
    CHECK(std::abs(t.total.item() - sum) < 1e-6);
}

TEST_CASE("generator receives gradient through the adversarial term") {
    const PatchDiscriminator d(DiscriminatorConfig{}, 6);
    Tensor fake = Tensor::from(Shape{2, 3, 32, 32}, std::vector<float>(2 * 3 * 32 * 32, 0.4f), true);
    AdvBatch b;
    b.real_images = random(Shape{2, 3, 32, 32}, 14);
    b.fake_images = add_scalar(fake, 0.0f);
    b.real_patches.push_back(crop(b.real_images, 8, 8, 16, 16));
    b.fake_patches.push_back(crop(b.fake_images, 0, 16, 16, 16));
    backward(adversarial_losses([&](const Tensor& x) { return d.forward(x); }, b).g_loss);
    REQUIRE(fake.has_grad());
    double norm = 0.0;
    for (float v : fake.grad()) {
        CHECK(std::isfinite(v));
        norm += std::abs(v);
    }
    CHECK(norm > 0.0);
}

TEST_CASE("weights validation") {
    LossWeights w{0, 0, 0, 0, 0};
    CHECK_THROWS_AS(w.validate(), ConfigError);
    LossWeights neg;
    neg.w_perc = -1;
    CHECK_THROWS_AS(neg.validate(), ConfigError);
    KeyValues kv;
    LossWeights custom{0.5f, 2.0f, 0.25f, 3.0f, 1.0f};
    custom.to_kv(kv);
    const LossWeights back = LossWeights::from_kv(kv);
    CHECK(back.w_perc == 2.0f);
    CHECK(back.w_adv == 3.0f);
}

}
