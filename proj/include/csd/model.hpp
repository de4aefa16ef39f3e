#pragma once

#include "csd/config.hpp"
#include "csd/ops.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace csd {

/// Architecture matrix: three frameworks (single U-Net, shared encoder,
/// two U-Nets), each bridged by a reconstruction loss (a/c/e) or by the
/// decomposition connection (b/d/f).
enum class Variant { arc_a, arc_b, arc_c, arc_d, arc_e, arc_f };
enum class Connection { reconstruction_loss, csd };
enum class CsdPlacement { upsample_only, skip_add_only, both };

Variant parse_variant(const std::string& s);
std::string to_string(Variant v);
Connection parse_connection(const std::string& s);
std::string to_string(Connection c);
CsdPlacement parse_placement(const std::string& s);
std::string to_string(CsdPlacement p);

/// Connection implied by the variant letter.
Connection connection_of(Variant v);

struct ModelConfig {
    Variant variant = Variant::arc_f;
    Connection connection = Connection::csd;
    CsdPlacement csd_placement = CsdPlacement::both;
    bool guidance = true;
    bool residual_output = false;
    /// Nine block widths: encoder 0..4 (4 is the bottleneck), decoder 5..8.
    std::vector<int> channel_plan{32, 64, 128, 256, 512, 256, 128, 64, 32};
    float eps = kDivEps;

    bool shared_encoder() const { return variant == Variant::arc_c || variant == Variant::arc_d; }
    bool single_network() const { return variant == Variant::arc_a || variant == Variant::arc_b; }

    void validate() const;

    /// Keys under `model.`.
    void to_kv(KeyValues& kv) const;
    static ModelConfig from_kv(const KeyValues& kv);
    static std::vector<std::string> keys();

    /// csdnet, csdgan, litecsdnet, slitecsdnet.
    static ModelConfig preset(const std::string& name);
    static ModelConfig with_variant(ModelConfig base, Variant v);

    bool operator==(const ModelConfig&) const = default;
};

struct ConvBlock {
    Conv2dParams conv;
    BatchNormParams bn;

    Tensor forward(const Tensor& x, bool training);
};

/// Five conv blocks with a 2x2 max-pool after each of the first four.
struct Encoder {
    std::vector<ConvBlock> blocks;

    struct Output {
        std::vector<Tensor> skips; // blocks 0..3, pre-pool
        Tensor bottleneck;
    };
    Output forward(const Tensor& x, bool training);
};

/// Decoder features at each depth, captured where the connection can act.
struct DecoderTrace {
    std::vector<Tensor> after_upsample;
    std::vector<Tensor> after_skip;
};

/// Four (upsample -> block -> add mirror skip) stages.
struct Decoder {
    std::vector<ConvBlock> blocks;

    /// When `divisors` is given, features are divided by the matching
    /// entries according to `placement`. `trace` receives the features
    /// before any division of this stream.
    Tensor forward(Tensor x, const std::vector<Tensor>& skips, bool training, DecoderTrace* trace,
                   const DecoderTrace* divisors, CsdPlacement placement, float eps);
};

struct ForwardOptions {
    /// Test hook: replace every illumination-stream decoder feature and the
    /// final illumination with ones.
    bool force_unit_illumination = false;
    bool keep_traces = false;
};

struct ForwardResult {
    Tensor enhanced;     // (N,3,H,W)
    Tensor illumination; // (N,1,H,W)
    Tensor reflectance;  // (N,3,H,W)
    Tensor gray;         // (N,1,H,W) luma of the input, constant
    DecoderTrace reflectance_trace;
    DecoderTrace illumination_trace;
};

struct ParamInfo {
    std::string name;
    Shape shape;
    int64_t count = 0;
};

class EnhanceModel {
public:
    EnhanceModel(const ModelConfig& config, uint64_t seed);

    /// `low` is (N,3,H,W) with H, W divisible by 16.
    ForwardResult forward(const Tensor& low, bool training, const ForwardOptions& opts = {});

    const ModelConfig& config() const { return config_; }

    /// Learnable tensors in a fixed registration order.
    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    /// Batch-norm running statistics, addressable by name.
    std::vector<std::pair<std::string, std::vector<float>*>> named_buffers();
    std::vector<ParamInfo> param_table() const;

private:
    struct Stream {
        Decoder decoder;
        Conv2dParams head;
    };

    ModelConfig config_;
    // arc_a/b: `reflectance_encoder` + `reflectance` stream (head emits 4 channels).
    // arc_c/d: shared `reflectance_encoder`, two streams.
    // arc_e/f: two encoders, two streams.
    Encoder reflectance_encoder_;
    Encoder illumination_encoder_;
    Stream reflectance_;
    Stream illumination_;
};

/// Exact count of learnable scalars (conv weights/biases, batch-norm scale/shift).
int64_t count_params(const EnhanceModel& model);
int64_t count_params(const ModelConfig& config);

struct DiscriminatorConfig {
    std::vector<int> channels{16, 32, 64};
    int patch_count = 5;
    int patch_size = 32;
    float leaky_slope = 0.2f;

    void validate() const;
    void to_kv(KeyValues& kv) const;
    static DiscriminatorConfig from_kv(const KeyValues& kv);
    static std::vector<std::string> keys();
    bool operator==(const DiscriminatorConfig&) const = default;
};

/// PatchGAN: three stride-2 4x4 conv + leaky-ReLU stages and a 1x1 conv to
/// one unbounded score per (H/8 x W/8) cell.
class PatchDiscriminator {
public:
    PatchDiscriminator(const DiscriminatorConfig& config, uint64_t seed);

    Tensor forward(const Tensor& x) const;

    const DiscriminatorConfig& config() const { return config_; }
    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

private:
    DiscriminatorConfig config_;
    std::vector<Conv2dParams> stages_;
    Conv2dParams score_;
};

/// Conv weights ~ N(0, 2/fan_in), zero bias.
Conv2dParams make_conv(int64_t in_ch, int64_t out_ch, int64_t kernel, uint64_t seed);

} // namespace csd
