#pragma once

#include "csd/checkpoint.hpp"
#include "csd/config.hpp"
#include "csd/image.hpp"
#include "csd/losses.hpp"
#include "csd/model.hpp"
#include "csd/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace csd {

struct TrainConfig {
    int64_t iterations = 200;
    int batch_size = 8;
    uint64_t seed = 0;
    OptimizerConfig optimizer{OptimizerKind::adam, 5e-3f};
    /// 0 disables periodic checkpoints; the final one is always written when
    /// a checkpoint path is set.
    int64_t checkpoint_every = 0;
    uint64_t feature_seed = 0x5eed;
    LossWeights weights;

    void validate() const;
    /// Keys under `train.` plus the `loss.` weights.
    void to_kv(KeyValues& kv) const;
    static TrainConfig from_kv(const KeyValues& kv);
    static std::vector<std::string> keys();
};

struct LossRow {
    int64_t iteration = 0;
    double mse = 0.0;
    double perceptual = 0.0;
    double smooth = 0.0;
    double recon = 0.0;
    double adv = 0.0;
    double d_loss = 0.0;
    double total = 0.0;
    double wall_ms = 0.0;

    /// Equality ignoring wall time.
    bool same_losses(const LossRow& o) const;
};

struct TrainReport {
    std::vector<LossRow> rows;

    std::string to_csv() const;
    void save_csv(const std::filesystem::path& path) const;
};

/// Stateless batch schedule: iteration t takes stream positions
/// [t*B, (t+1)*B); each epoch is a fresh permutation seeded by (seed, epoch).
std::vector<int> batch_indices(int64_t iteration, int batch_size, int dataset_size, uint64_t seed);

using CheckpointSink = std::function<void(const Checkpoint&)>;

/// Paired CSDNet training on images that share one extent (multiple of 16).
class PairedTrainer {
public:
    PairedTrainer(EnhanceModel& model, std::vector<Image> low, std::vector<Image> normal, TrainConfig cfg);

    /// One optimizer step on the batch scheduled for the current iteration.
    LossRow step();
    /// Steps until `cfg.iterations`; periodic and final checkpoints go to `sink`.
    TrainReport run(const CheckpointSink& sink = {});

    Checkpoint checkpoint() const;
    /// Restores weights, optimizer moments and the iteration counter.
    void restore(const Checkpoint& ckpt);

    int64_t iteration() const { return iteration_; }
    const TrainConfig& config() const { return cfg_; }

private:
    EnhanceModel& model_;
    std::vector<Image> low_;
    std::vector<Image> normal_;
    TrainConfig cfg_;
    FeatureExtractor fe_;
    std::vector<Tensor> params_;
    OptState opt_;
    int64_t iteration_ = 0;
};

/// Unpaired CSDGAN training: per iteration one discriminator step on the
/// detached generator output, then one generator step.
class AdversarialTrainer {
public:
    AdversarialTrainer(EnhanceModel& model, PatchDiscriminator& disc, std::vector<Image> low, std::vector<Image> normal,
                       TrainConfig cfg);

    LossRow step();
    TrainReport run(const CheckpointSink& sink = {});

    Checkpoint checkpoint() const;
    void restore(const Checkpoint& ckpt);

    int64_t iteration() const { return iteration_; }

private:
    AdvBatch make_batch(const Tensor& real, const Tensor& fake) const;

    EnhanceModel& model_;
    PatchDiscriminator& disc_;
    std::vector<Image> low_;
    std::vector<Image> normal_;
    TrainConfig cfg_;
    FeatureExtractor fe_;
    std::vector<Tensor> params_;
    std::vector<Tensor> disc_params_;
    OptState opt_;
    OptState disc_opt_;
    int64_t iteration_ = 0;
};

/// Throws NumericError naming the first non-finite entry.
void check_finite(const std::vector<std::pair<std::string, Tensor>>& named, const char* what);

/// Mean paired objective over a dataset in inference mode, in batches.
double dataset_loss(EnhanceModel& model, const std::vector<Image>& low, const std::vector<Image>& normal,
                    const TrainConfig& cfg);

} // namespace csd
