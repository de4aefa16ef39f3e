#pragma once

#include "csd/config.hpp"
#include "csd/model.hpp"
#include "csd/ops.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace csd {

struct LossWeights {
    float w_mse = 1.0f;
    float w_perc = 1.0f;
    float w_smooth = 1.0f;
    float w_adv = 1.0f;
    /// ||L - R*I||^2 term, used only by the reconstruction-loss variants.
    float w_recon = 1.0f;

    void validate() const;
    void to_kv(KeyValues& kv) const;
    static LossWeights from_kv(const KeyValues& kv);
    static std::vector<std::string> keys();
};

/// Frozen conv(3x3)+ReLU stack standing in for a pretrained perceptual
/// network: four stages each followed by a 2x2 max-pool, then a fifth conv
/// whose activation is the compared feature map (1/16 spatial scale).
class FeatureExtractor {
public:
    static constexpr int kStages = 5;

    explicit FeatureExtractor(uint64_t seed = 0x5eed, std::vector<int> channels = {8, 16, 32, 32, 32});

    /// Loads five (weight, bias) CSDT blocks in stage order.
    static FeatureExtractor from_file(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    Tensor forward(const Tensor& x) const;

    int out_channels() const { return channels_.back(); }
    /// Spatial scale of the output relative to the input.
    int downscale() const { return 1 << (kStages - 1); }
    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::vector<int> channels_;
    std::vector<Conv2dParams> convs_;
};

Tensor mse_loss(const Tensor& out, const Tensor& gt);
/// Mean |phi(a) - phi(b)| over the extracted feature map.
Tensor perceptual_loss(const Tensor& a, const Tensor& b, const FeatureExtractor& fe);
/// Mean smooth-L1 of (I - Lg).
Tensor smooth_l1_illum(const Tensor& illumination, const Tensor& gray);
/// Mean (L - R*I)^2.
Tensor reconstruction_loss(const Tensor& low, const Tensor& reflectance, const Tensor& illumination);

struct LossTerms {
    Tensor mse;
    Tensor perceptual;
    Tensor smooth;
    Tensor recon;
    Tensor adv;
    Tensor total;
};

/// Paired objective: w_mse*MSE(out, gt) + w_perc*P(out, gt) + w_smooth*S(I, Lg),
/// plus w_recon*||L - R*I||^2 for reconstruction-loss variants.
LossTerms csdnet_loss(const ForwardResult& result, const Tensor& low, const Tensor& gt, const FeatureExtractor& fe,
                      const LossWeights& w, Connection connection);

/// Maps images (N,3,H,W) to score maps (N,1,h,w).
using Scorer = std::function<Tensor(const Tensor&)>;

struct AdvBatch {
    Tensor real_images;
    Tensor fake_images;
    // One (N,3,s,s) batch per patch slot; empty when there is no local term.
    std::vector<Tensor> real_patches;
    std::vector<Tensor> fake_patches;
};

struct AdvLosses {
    Tensor d_loss;
    Tensor g_loss;
};

/// Relativistic-average least-squares objectives from score maps, each
/// reduced to one score per sample:
///   d = E[(s_r - E s_f - 1)^2] + E[(s_f - E s_r)^2]
///   g = E[(s_f - E s_r - 1)^2] + E[(s_r - E s_f)^2]
AdvLosses relativistic_losses(const Tensor& real_scores, const Tensor& fake_scores);

/// Global term plus the mean of the per-slot local-patch terms.
AdvLosses adversarial_losses(const Scorer& disc, const AdvBatch& batch);

/// Unpaired objective: w_adv*g_loss + w_perc*P(L, out) + w_smooth*S(I, Lg).
LossTerms csdgan_loss(const ForwardResult& result, const Tensor& low, const FeatureExtractor& fe,
                      const Tensor& g_loss, const LossWeights& w);

} // namespace csd
