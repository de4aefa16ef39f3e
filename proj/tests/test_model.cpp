#include "csd/losses.hpp"
#include "csd/model.hpp"
#include "csd/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace csd;

namespace {

Tensor random_batch(int64_t n, int64_t h, int64_t w, uint64_t seed) {
    Rng r(seed);
    std::vector<float> v(static_cast<size_t>(n * 3 * h * w));
    for (auto& x : v) x = static_cast<float>(r.uniform(0.02, 0.6));
    return Tensor::from(Shape{n, 3, h, w}, v);
}

ModelConfig lite(Variant v) { return ModelConfig::with_variant(ModelConfig::preset("litecsdnet"), v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i)
        m = std::max(m, static_cast<double>(std::abs(a.data()[i] - b.data()[i])));
    return m;
}

const std::vector<Variant> kAll{Variant::arc_a, Variant::arc_b, Variant::arc_c,
                                Variant::arc_d, Variant::arc_e, Variant::arc_f};

} // namespace

TEST_SUITE("model") {

TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.channel_plan.pop_back();
    CHECK_THROWS_AS(c.validate(), ConfigError);

    ModelConfig mixed;
    mixed.variant = Variant::arc_e;
    mixed.connection = Connection::csd;
    CHECK_THROWS_AS(mixed.validate(), ConfigError);
    CHECK_THROWS_AS(EnhanceModel(c, 0), ConfigError);

    for (Variant v : kAll) CHECK(parse_variant(to_string(v)) == v);
    CHECK(connection_of(Variant::arc_c) == Connection::reconstruction_loss);
    CHECK(connection_of(Variant::arc_d) == Connection::csd);
    CHECK_THROWS_AS(ModelConfig::preset("nope"), ConfigError);
}

TEST_CASE("config key-value round trip") {
    for (const char* p : {"csdnet", "csdgan", "litecsdnet", "slitecsdnet"}) {
        const ModelConfig c = ModelConfig::preset(p);
        KeyValues kv;
        c.to_kv(kv);
        CHECK(ModelConfig::from_kv(kv) == c);
    }
    CHECK(ModelConfig::preset("csdgan").residual_output);
    CHECK(ModelConfig::preset("slitecsdnet").shared_encoder());
}

TEST_CASE("first convolutions see guidance as an extra channel") {
    EnhanceModel m(ModelConfig::preset("csdnet"), 0);
    int64_t ienet_in = -1, renet_in = -1;
    for (const auto& p : m.param_table()) {
        if (p.shape.dims[2] != 3) continue;
        if (ienet_in < 0 && p.name.rfind("ienet.", 0) == 0 && p.name.find("conv.weight") != std::string::npos) ienet_in = p.shape.c();
        if (renet_in < 0 && p.name.rfind("renet.", 0) == 0 && p.name.find("conv.weight") != std::string::npos) renet_in = p.shape.c();
    }
    CHECK(ienet_in == 2);
    CHECK(renet_in == 3);

    ModelConfig off = ModelConfig::preset("litecsdnet");
    off.guidance = false;
    EnhanceModel mo(off, 0);
    for (const auto& p : mo.param_table()) {
        if (p.name.rfind("ienet.", 0) == 0 && p.name.find("conv.weight") != std::string::npos && p.shape.dims[2] == 3) {
            CHECK(p.shape.c() == 1);
            break;
        }
    }
}

TEST_CASE("output shapes for every variant") {
    for (Variant v : kAll) {
        CAPTURE(to_string(v));
        EnhanceModel m(lite(v), 1);
        const ForwardResult r = m.forward(random_batch(2, 32, 48, 3), true);
        CHECK(r.enhanced.shape() == Shape{2, 3, 32, 48});
        CHECK(r.reflectance.shape() == Shape{2, 3, 32, 48});
        CHECK(r.illumination.shape() == Shape{2, 1, 32, 48});
        for (float x : r.enhanced.data()) {
            CHECK(x >= 0.0f);
            CHECK(x <= 1.0f);
        }
    }
}

TEST_CASE("indivisible extents are rejected") {
    EnhanceModel m(lite(Variant::arc_f), 1);
    CHECK_THROWS_AS(m.forward(random_batch(1, 30, 32, 1), false), ShapeError);
}

TEST_CASE("reconstruction-loss variants output the reflectance") {
    for (Variant v : {Variant::arc_a, Variant::arc_c, Variant::arc_e}) {
        EnhanceModel m(lite(v), 2);
        const ForwardResult r = m.forward(random_batch(1, 32, 32, 4), false);
        CHECK(std::equal(r.enhanced.data().begin(), r.enhanced.data().end(), r.reflectance.data().begin()));
    }
}

TEST_CASE("unit illumination reduces the connection to the reflectance stream alone") {
    // arc_e and arc_f share a layer layout, so one seed gives them identical
    // weights; arc_e never divides.
    EnhanceModel csd(lite(Variant::arc_f), 5);
    EnhanceModel plain(lite(Variant::arc_e), 5);
    const Tensor low = random_batch(2, 32, 32, 6);
    ForwardOptions unit;
    unit.force_unit_illumination = true;
    const ForwardResult a = csd.forward(low, false, unit);
    const ForwardResult b = plain.forward(low, false);
    for (float v : a.illumination.data()) CHECK(v == 1.0f);
    // Up to eight divisions by (1 + eps) plus the final one; sigmoid heads damp the drift.
    CHECK(max_abs_diff(a.enhanced, b.reflectance) < 10 * kDivEps);
}

TEST_CASE("placement changes the output") {
    ModelConfig both = lite(Variant::arc_f);
    ModelConfig up = both;
    up.csd_placement = CsdPlacement::upsample_only;
    ModelConfig skip = both;
    skip.csd_placement = CsdPlacement::skip_add_only;
    EnhanceModel mb(both, 7), mu(up, 7), ms(skip, 7);
    const Tensor low = random_batch(1, 32, 32, 8);
    const Tensor eb = mb.forward(low, false).enhanced;
    CHECK(max_abs_diff(eb, mu.forward(low, false).enhanced) > 1e-6);
    CHECK(max_abs_diff(eb, ms.forward(low, false).enhanced) > 1e-6);
}

TEST_CASE("forward is deterministic") {
    EnhanceModel m(lite(Variant::arc_d), 9);
    const Tensor low = random_batch(2, 32, 32, 10);
    const Tensor a = m.forward(low, false).enhanced;
    const Tensor b = m.forward(low, false).enhanced;
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("the connection carries gradient into both streams") {
    for (Variant v : {Variant::arc_b, Variant::arc_d, Variant::arc_f}) {
        CAPTURE(to_string(v));
        EnhanceModel m(lite(v), 11);
        const Tensor low = random_batch(2, 32, 32, 12);
        const ForwardResult r = m.forward(low, true);
        backward(mse_loss(r.enhanced, random_batch(2, 32, 32, 13)));
        for (const auto& [name, p] : m.named_parameters()) {
            CAPTURE(name);
            REQUIRE(p.has_grad());
            bool nonzero = false;
            for (float g : p.grad()) {
                CHECK(std::isfinite(g));
                nonzero = nonzero || g != 0.0f;
            }
            CHECK(nonzero);
        }
    }
}

TEST_CASE("full lite backward leaves every gradient finite") {
    EnhanceModel m(ModelConfig::preset("litecsdnet"), 14);
    const Tensor low = random_batch(4, 32, 32, 15);
    const ForwardResult r = m.forward(low, true);
    const FeatureExtractor fe;
    const LossTerms t = csdnet_loss(r, low, random_batch(4, 32, 32, 16), fe, LossWeights{}, Connection::csd);
    backward(t.total);
    for (const Tensor& p : m.parameters()) {
        REQUIRE(p.has_grad());
        for (float g : p.grad()) CHECK(std::isfinite(g));
    }
}

TEST_CASE("parameter counts") {
    const Conv2dParams c = make_conv(2, 4, 3, 0);
    CHECK(c.weight.numel() + c.bias.numel() == 76);

    for (const char* preset : {"csdnet", "litecsdnet"}) {
        const ModelConfig base = ModelConfig::preset(preset);
        CHECK(count_params(ModelConfig::with_variant(base, Variant::arc_d)) <
              count_params(ModelConfig::with_variant(base, Variant::arc_f)));
        CHECK(count_params(ModelConfig::with_variant(base, Variant::arc_b)) <
              count_params(ModelConfig::with_variant(base, Variant::arc_d)));
    }
    EnhanceModel m(ModelConfig::preset("litecsdnet"), 0);
    int64_t total = 0;
    for (const auto& p : m.param_table()) {
        CHECK(p.count == p.shape.numel());
        total += p.count;
    }
    CHECK(total == count_params(m));
    CHECK(count_params(m) == count_params(m.config()));
    CHECK(count_params(ModelConfig::preset("litecsdnet")) < 0.01 * count_params(ModelConfig::preset("csdnet")));
}

TEST_CASE("discriminator score maps") {
    const PatchDiscriminator d(DiscriminatorConfig{}, 3);
    CHECK(d.forward(random_batch(2, 64, 64, 1)).shape() == Shape{2, 1, 8, 8});
    CHECK(d.forward(random_batch(1, 32, 32, 2)).shape() == Shape{1, 1, 4, 4});
    CHECK_THROWS_AS(d.forward(random_batch(1, 36, 32, 3)), ShapeError);
}

TEST_CASE("zero discriminator weights score the bias") {
    PatchDiscriminator d(DiscriminatorConfig{}, 4);
    auto named = d.named_parameters();
    for (auto& [name, t] : named) std::fill(t.data().begin(), t.data().end(), 0.0f);
    Tensor last_bias = named.back().second;
    REQUIRE(last_bias.numel() == 1);
    last_bias.data()[0] = 0.375f;
    const Tensor scores = d.forward(random_batch(1, 32, 32, 5));
    for (float s : scores.data()) CHECK(s == 0.375f);
}

TEST_CASE("discriminator config validation") {
    DiscriminatorConfig c;
    c.channels = {8, 8};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    DiscriminatorConfig p;
    p.patch_size = 12;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

}
