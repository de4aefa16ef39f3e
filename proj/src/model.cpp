#include "csd/model.hpp"
#include "csd/retinex.hpp"
#include "csd/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace csd {

namespace {

constexpr int kPoolStages = 4;
constexpr int kPlanLength = 9;

using Named = std::vector<std::pair<std::string, Tensor>>;

void collect_conv(const std::string& prefix, const Conv2dParams& c, Named& out) {
    out.emplace_back(prefix + ".weight", c.weight);
    if (c.bias.defined()) out.emplace_back(prefix + ".bias", c.bias);
}

void collect_block(const std::string& prefix, const ConvBlock& b, Named& out) {
    collect_conv(prefix + ".conv", b.conv, out);
    out.emplace_back(prefix + ".bn.gamma", b.bn.gamma);
    out.emplace_back(prefix + ".bn.beta", b.bn.beta);
}

void collect_encoder(const std::string& prefix, const Encoder& e, Named& out) {
    for (size_t i = 0; i < e.blocks.size(); ++i) collect_block(prefix + ".enc." + std::to_string(i), e.blocks[i], out);
}

void collect_decoder(const std::string& prefix, const Decoder& d, Named& out) {
    for (size_t i = 0; i < d.blocks.size(); ++i) collect_block(prefix + ".dec." + std::to_string(i), d.blocks[i], out);
}

// Area average of every (factor x factor) block; a constant, off the tape.
Tensor area_downsample(const Tensor& x, int64_t factor) {
    const Shape& s = x.shape();
    const Shape os{s.n(), s.c(), s.h() / factor, s.w() / factor};
    Tensor out = Tensor::zeros(os);
    auto od = out.data();
    const float inv = 1.0f / static_cast<float>(factor * factor);
    for (int64_t nc = 0; nc < s.n() * s.c(); ++nc) {
        for (int64_t y = 0; y < os.h(); ++y) {
            for (int64_t xx = 0; xx < os.w(); ++xx) {
                double acc = 0.0;
                for (int64_t dy = 0; dy < factor; ++dy) {
                    for (int64_t dx = 0; dx < factor; ++dx) {
                        acc += x.data()[static_cast<size_t>(nc * s.plane() + (y * factor + dy) * s.w() + xx * factor + dx)];
                    }
                }
                od[static_cast<size_t>(nc * os.plane() + y * os.w() + xx)] = static_cast<float>(acc) * inv;
            }
        }
    }
    return out;
}

class SeedStream {
public:
    explicit SeedStream(uint64_t base) : base_(base) {}
    uint64_t next() { return derive_seed(base_, counter_++); }

private:
    uint64_t base_;
    uint64_t counter_ = 0;
};

ConvBlock make_block(int64_t in_ch, int64_t out_ch, SeedStream& seeds) {
    return ConvBlock{make_conv(in_ch, out_ch, 3, seeds.next()), BatchNormParams::make(out_ch)};
}

Encoder make_encoder(int64_t in_ch, const std::vector<int>& plan, SeedStream& seeds) {
    Encoder e;
    int64_t prev = in_ch;
    for (int i = 0; i <= kPoolStages; ++i) {
        e.blocks.push_back(make_block(prev, plan[static_cast<size_t>(i)], seeds));
        prev = plan[static_cast<size_t>(i)];
    }
    return e;
}

Decoder make_decoder(const std::vector<int>& plan, SeedStream& seeds) {
    Decoder d;
    int64_t prev = plan[kPoolStages];
    for (int i = kPoolStages + 1; i < kPlanLength; ++i) {
        d.blocks.push_back(make_block(prev, plan[static_cast<size_t>(i)], seeds));
        prev = plan[static_cast<size_t>(i)];
    }
    return d;
}

} // namespace

Variant parse_variant(const std::string& s) {
    static const char* names[] = {"arc_a", "arc_b", "arc_c", "arc_d", "arc_e", "arc_f"};
    for (int i = 0; i < 6; ++i) {
        if (s == names[i] || (s.size() == 1 && s[0] == 'a' + i)) return static_cast<Variant>(i);
    }
    throw ConfigError("unknown variant '" + s + "' (expected arc_a..arc_f)");
}

std::string to_string(Variant v) { return std::string("arc_") + static_cast<char>('a' + static_cast<int>(v)); }

Connection parse_connection(const std::string& s) {
    if (s == "csd") return Connection::csd;
    if (s == "reconstruction_loss") return Connection::reconstruction_loss;
    throw ConfigError("unknown connection '" + s + "' (expected csd or reconstruction_loss)");
}

std::string to_string(Connection c) { return c == Connection::csd ? "csd" : "reconstruction_loss"; }

CsdPlacement parse_placement(const std::string& s) {
    if (s == "upsample_only") return CsdPlacement::upsample_only;
    if (s == "skip_add_only") return CsdPlacement::skip_add_only;
    if (s == "both") return CsdPlacement::both;
    throw ConfigError("unknown csd placement '" + s + "' (expected upsample_only, skip_add_only or both)");
}

std::string to_string(CsdPlacement p) {
    switch (p) {
    case CsdPlacement::upsample_only: return "upsample_only";
    case CsdPlacement::skip_add_only: return "skip_add_only";
    case CsdPlacement::both: return "both";
    }
    return "both";
}

Connection connection_of(Variant v) {
    return (static_cast<int>(v) % 2 == 0) ? Connection::reconstruction_loss : Connection::csd;
}

void ModelConfig::validate() const {
    if (channel_plan.size() != kPlanLength) {
        throw ConfigError("channel_plan needs " + std::to_string(kPlanLength) + " widths, got " +
                          std::to_string(channel_plan.size()));
    }
    for (int c : channel_plan) {
        if (c <= 0) throw ConfigError("channel_plan widths must be positive");
    }
    for (int d = 0; d < kPoolStages; ++d) {
        // Additive skips: decoder block d adds encoder block 3-d.
        if (channel_plan[static_cast<size_t>(kPoolStages + 1 + d)] != channel_plan[static_cast<size_t>(kPoolStages - 1 - d)]) {
            throw ConfigError("channel_plan must be symmetric around the bottleneck for additive skips");
        }
    }
    if (connection != connection_of(variant)) {
        throw ConfigError("variant " + to_string(variant) + " implies connection " + to_string(connection_of(variant)));
    }
    if (!(eps > 0.0f)) throw ConfigError("model.eps must be positive");
}

std::vector<std::string> ModelConfig::keys() {
    return {"model.preset",  "model.variant", "model.connection", "model.csd_placement", "model.guidance",
            "model.residual_output", "model.channel_plan", "model.eps"};
}

void ModelConfig::to_kv(KeyValues& kv) const {
    kv.set("model.variant", to_string(variant));
    kv.set("model.connection", to_string(connection));
    kv.set("model.csd_placement", to_string(csd_placement));
    kv.set("model.guidance", guidance ? "true" : "false");
    kv.set("model.residual_output", residual_output ? "true" : "false");
    std::string plan;
    for (size_t i = 0; i < channel_plan.size(); ++i) plan += (i ? "," : "") + std::to_string(channel_plan[i]);
    kv.set("model.channel_plan", plan);
    kv.set("model.eps", format_float(eps));
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
    ModelConfig cfg = kv.has("model.preset") ? preset(kv.get("model.preset")) : ModelConfig{};
    if (kv.has("model.variant")) {
        cfg.variant = parse_variant(kv.get("model.variant"));
        cfg.connection = connection_of(cfg.variant);
    }
    if (kv.has("model.connection")) cfg.connection = parse_connection(kv.get("model.connection"));
    if (kv.has("model.csd_placement")) cfg.csd_placement = parse_placement(kv.get("model.csd_placement"));
    cfg.guidance = kv.get_bool("model.guidance", cfg.guidance);
    cfg.residual_output = kv.get_bool("model.residual_output", cfg.residual_output);
    if (kv.has("model.channel_plan")) {
        cfg.channel_plan.clear();
        for (const auto& part : split(kv.get("model.channel_plan"), ',')) {
            try {
                cfg.channel_plan.push_back(std::stoi(part));
            } catch (const std::exception&) {
                throw ConfigError("model.channel_plan: '" + part + "' is not an integer");
            }
        }
    }
    cfg.eps = static_cast<float>(kv.get_double("model.eps", cfg.eps));
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig cfg;
    if (name == "csdnet") return cfg;
    if (name == "csdgan") {
        cfg.residual_output = true;
        return cfg;
    }
    if (name == "litecsdnet" || name == "slitecsdnet") {
        cfg.channel_plan.assign(kPlanLength, 12);
        if (name == "slitecsdnet") cfg = with_variant(cfg, Variant::arc_d);
        return cfg;
    }
    throw ConfigError("unknown preset '" + name + "' (expected csdnet, csdgan, litecsdnet or slitecsdnet)");
}

ModelConfig ModelConfig::with_variant(ModelConfig base, Variant v) {
    base.variant = v;
    base.connection = connection_of(v);
    return base;
}

Conv2dParams make_conv(int64_t in_ch, int64_t out_ch, int64_t kernel, uint64_t seed) {
    Rng rng(seed);
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch * kernel * kernel));
    std::vector<float> w(static_cast<size_t>(out_ch * in_ch * kernel * kernel));
    for (float& v : w) v = static_cast<float>(rng.normal() * stddev);
    Conv2dParams p;
    p.weight = Tensor::from(Shape{out_ch, in_ch, kernel, kernel}, std::move(w), true);
    p.bias = Tensor::zeros(Shape{1, out_ch, 1, 1}, true);
    return p;
}

Tensor ConvBlock::forward(const Tensor& x, bool training) {
    return relu(batchnorm2d(conv2d(x, conv, 1, 1), bn, training));
}

Encoder::Output Encoder::forward(const Tensor& x, bool training) {
    Output out;
    Tensor h = x;
    for (size_t i = 0; i < blocks.size(); ++i) {
        h = blocks[i].forward(h, training);
        if (i + 1 < blocks.size()) {
            out.skips.push_back(h);
            h = maxpool2x2(h);
        }
    }
    out.bottleneck = h;
    return out;
}

Tensor Decoder::forward(Tensor x, const std::vector<Tensor>& skips, bool training, DecoderTrace* trace,
                        const DecoderTrace* divisors, CsdPlacement placement, float eps) {
    const bool at_upsample = divisors && placement != CsdPlacement::skip_add_only;
    const bool at_skip = divisors && placement != CsdPlacement::upsample_only;
    for (size_t d = 0; d < blocks.size(); ++d) {
        x = upsample_nearest2x(x);
        if (trace) trace->after_upsample.push_back(x);
        if (at_upsample) x = csd_divide(x, divisors->after_upsample[d], eps);
        x = blocks[d].forward(x, training);
        x = add(x, skips[skips.size() - 1 - d]);
        if (trace) trace->after_skip.push_back(x);
        // The feature feeding the output projection is left undivided; the
        // image-level division in final_enhance takes its place.
        if (at_skip && d + 1 < blocks.size()) x = csd_divide(x, divisors->after_skip[d], eps);
    }
    return x;
}

EnhanceModel::EnhanceModel(const ModelConfig& config, uint64_t seed) : config_(config) {
    config_.validate();
    const auto& plan = config_.channel_plan;
    SeedStream seeds(seed);
    const int64_t last = plan.back();
    reflectance_encoder_ = make_encoder(3, plan, seeds);
    reflectance_.decoder = make_decoder(plan, seeds);
    if (config_.single_network()) {
        reflectance_.head = make_conv(last + (config_.guidance ? 1 : 0), 4, 3, seeds.next());
        return;
    }
    reflectance_.head = make_conv(last, 3, 3, seeds.next());
    if (!config_.shared_encoder()) illumination_encoder_ = make_encoder(config_.guidance ? 2 : 1, plan, seeds);
    illumination_.decoder = make_decoder(plan, seeds);
    illumination_.head = make_conv(last, 1, 3, seeds.next());
}

ForwardResult EnhanceModel::forward(const Tensor& low, bool training, const ForwardOptions& opts) {
    const Shape& s = low.shape();
    if (s.c() != 3) throw ShapeError("model input must have 3 channels, got " + s.str());
    const int64_t multiple = int64_t{1} << kPoolStages;
    if (s.h() % multiple != 0 || s.w() % multiple != 0) {
        throw ShapeError("model input extents " + std::to_string(s.h()) + "x" + std::to_string(s.w()) +
                         " are not divisible by " + std::to_string(multiple) + "; pad the image first");
    }
    const float eps = config_.eps;
    const bool csd = config_.connection == Connection::csd;
    ForwardResult r;
    r.gray = to_grayscale(low);
    Tensor guide = config_.guidance ? illumination_guidance(r.gray) : Tensor{};

    Tensor reflectance_raw;
    if (config_.single_network()) {
        auto enc = reflectance_encoder_.forward(low, training);
        Tensor feats = reflectance_.decoder.forward(enc.bottleneck, enc.skips, training,
                                                    opts.keep_traces ? &r.reflectance_trace : nullptr, nullptr,
                                                    config_.csd_placement, eps);
        if (config_.guidance) feats = concat_channels(feats, guide);
        Tensor out = sigmoid(conv2d(feats, reflectance_.head, 1, 1));
        reflectance_raw = slice_channels(out, 0, 3);
        r.illumination = slice_channels(out, 3, 1);
    } else {
        Encoder::Output renc = reflectance_encoder_.forward(low, training);
        Encoder::Output ienc;
        Tensor istart;
        if (config_.shared_encoder()) {
            ienc = renc;
            istart = renc.bottleneck;
            if (config_.guidance) {
                Tensor small = area_downsample(guide, multiple);
                istart = add(istart, broadcast_to(small, istart.shape()));
            }
        } else {
            Tensor iin = config_.guidance ? concat_channels(r.gray, guide) : r.gray;
            ienc = illumination_encoder_.forward(iin, training);
            istart = ienc.bottleneck;
        }
        Tensor ifeats = illumination_.decoder.forward(istart, ienc.skips, training, &r.illumination_trace, nullptr,
                                                      config_.csd_placement, eps);
        r.illumination = sigmoid(conv2d(ifeats, illumination_.head, 1, 1));
        if (opts.force_unit_illumination) {
            for (auto& t : r.illumination_trace.after_upsample) t = Tensor::ones_like(t);
            for (auto& t : r.illumination_trace.after_skip) t = Tensor::ones_like(t);
            r.illumination = Tensor::ones_like(r.illumination);
        }
        Tensor rfeats = reflectance_.decoder.forward(renc.bottleneck, renc.skips, training,
                                                     opts.keep_traces ? &r.reflectance_trace : nullptr,
                                                     csd ? &r.illumination_trace : nullptr, config_.csd_placement, eps);
        reflectance_raw = sigmoid(conv2d(rfeats, reflectance_.head, 1, 1));
        if (!opts.keep_traces) r.illumination_trace = {};
    }
    if (opts.force_unit_illumination) r.illumination = Tensor::ones_like(r.illumination);

    if (config_.residual_output) {
        // Output head acts as a signed correction in (-1, 1) on top of the input.
        Tensor delta = add_scalar(mul_scalar(reflectance_raw, 2.0f), -1.0f);
        r.reflectance = clamp(add(low, delta), 0.0f, 1.0f);
    } else {
        r.reflectance = reflectance_raw;
    }
    r.enhanced = csd ? final_enhance(r.reflectance, r.illumination, eps) : r.reflectance;
    return r;
}

std::vector<std::pair<std::string, Tensor>> EnhanceModel::named_parameters() const {
    Named out;
    if (config_.single_network()) {
        collect_encoder("net", reflectance_encoder_, out);
        collect_decoder("net", reflectance_.decoder, out);
        collect_conv("net.head", reflectance_.head, out);
        return out;
    }
    if (config_.shared_encoder()) {
        collect_encoder("shared", reflectance_encoder_, out);
    } else {
        collect_encoder("renet", reflectance_encoder_, out);
        collect_encoder("ienet", illumination_encoder_, out);
    }
    collect_decoder("renet", reflectance_.decoder, out);
    collect_conv("renet.head", reflectance_.head, out);
    collect_decoder("ienet", illumination_.decoder, out);
    collect_conv("ienet.head", illumination_.head, out);
    return out;
}

std::vector<Tensor> EnhanceModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, std::vector<float>*>> EnhanceModel::named_buffers() {
    std::vector<std::pair<std::string, std::vector<float>*>> out;
    auto add_blocks = [&](const std::string& prefix, std::vector<ConvBlock>& blocks) {
        for (size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = prefix + "." + std::to_string(i) + ".bn.";
            out.emplace_back(p + "running_mean", &blocks[i].bn.running_mean);
            out.emplace_back(p + "running_var", &blocks[i].bn.running_var);
        }
    };
    if (config_.single_network()) {
        add_blocks("net.enc", reflectance_encoder_.blocks);
        add_blocks("net.dec", reflectance_.decoder.blocks);
        return out;
    }
    if (config_.shared_encoder()) {
        add_blocks("shared.enc", reflectance_encoder_.blocks);
    } else {
        add_blocks("renet.enc", reflectance_encoder_.blocks);
        add_blocks("ienet.enc", illumination_encoder_.blocks);
    }
    add_blocks("renet.dec", reflectance_.decoder.blocks);
    add_blocks("ienet.dec", illumination_.decoder.blocks);
    return out;
}

std::vector<ParamInfo> EnhanceModel::param_table() const {
    std::vector<ParamInfo> rows;
    for (auto& [name, t] : named_parameters()) rows.push_back({name, t.shape(), t.numel()});
    return rows;
}

int64_t count_params(const EnhanceModel& model) {
    int64_t total = 0;
    for (const auto& t : model.parameters()) total += t.numel();
    return total;
}

int64_t count_params(const ModelConfig& config) { return count_params(EnhanceModel(config, 0)); }

void DiscriminatorConfig::validate() const {
    if (channels.size() != 3) throw ConfigError("discriminator needs exactly three stage widths");
    for (int c : channels) {
        if (c <= 0) throw ConfigError("discriminator widths must be positive");
    }
    if (patch_count < 0) throw ConfigError("disc.patch_count must be >= 0");
    if (patch_size <= 0 || patch_size % 8 != 0) throw ConfigError("disc.patch_size must be a positive multiple of 8");
}

std::vector<std::string> DiscriminatorConfig::keys() {
    return {"disc.channels", "disc.patch_count", "disc.patch_size", "disc.leaky_slope"};
}

void DiscriminatorConfig::to_kv(KeyValues& kv) const {
    kv.set("disc.channels", std::to_string(channels[0]) + "," + std::to_string(channels[1]) + "," +
                                std::to_string(channels[2]));
    kv.set("disc.patch_count", std::to_string(patch_count));
    kv.set("disc.patch_size", std::to_string(patch_size));
    kv.set("disc.leaky_slope", format_float(leaky_slope));
}

DiscriminatorConfig DiscriminatorConfig::from_kv(const KeyValues& kv) {
    DiscriminatorConfig cfg;
    if (kv.has("disc.channels")) {
        cfg.channels.clear();
        for (const auto& part : split(kv.get("disc.channels"), ',')) {
            try {
                cfg.channels.push_back(std::stoi(part));
            } catch (const std::exception&) {
                throw ConfigError("disc.channels: '" + part + "' is not an integer");
            }
        }
    }
    cfg.patch_count = kv.get_int("disc.patch_count", cfg.patch_count);
    cfg.patch_size = kv.get_int("disc.patch_size", cfg.patch_size);
    cfg.leaky_slope = static_cast<float>(kv.get_double("disc.leaky_slope", cfg.leaky_slope));
    cfg.validate();
    return cfg;
}

PatchDiscriminator::PatchDiscriminator(const DiscriminatorConfig& config, uint64_t seed) : config_(config) {
    config_.validate();
    SeedStream seeds(seed);
    int64_t prev = 3;
    for (int c : config_.channels) {
        stages_.push_back(make_conv(prev, c, 4, seeds.next()));
        prev = c;
    }
    score_ = make_conv(prev, 1, 1, seeds.next());
}

Tensor PatchDiscriminator::forward(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.h() % 8 != 0 || s.w() % 8 != 0) {
        throw ShapeError("discriminator input extents must be divisible by 8, got " + s.str());
    }
    Tensor h = x;
    for (const auto& stage : stages_) h = leaky_relu(conv2d(h, stage, 2, 1), config_.leaky_slope);
    return conv2d(h, score_, 1, 0);
}

std::vector<std::pair<std::string, Tensor>> PatchDiscriminator::named_parameters() const {
    Named out;
    for (size_t i = 0; i < stages_.size(); ++i) collect_conv("disc.stage." + std::to_string(i), stages_[i], out);
    collect_conv("disc.score", score_, out);
    return out;
}

std::vector<Tensor> PatchDiscriminator::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

} // namespace csd
