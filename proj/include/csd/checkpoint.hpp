#pragma once

#include "csd/config.hpp"
#include "csd/model.hpp"
#include "csd/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace csd {

/// Binary layout (little-endian):
///   "CSDC" u32 version
///   u32 len, config text (`key = value` lines)
///   u32 count, then per tensor: u32 len, UTF-8 name, CSDT block
///   u32 count, then per optimizer: u32 len, name, u64 step, u32 n, n x (CSDT m, CSDT v)
///   u64 iteration
struct Checkpoint {
    struct NamedTensor {
        std::string name;
        std::vector<uint64_t> extents;
        std::vector<float> values;
        bool operator==(const NamedTensor&) const = default;
    };
    struct Optimizer {
        std::string name;
        OptState state;
        bool operator==(const Optimizer&) const = default;
    };

    KeyValues config;
    std::vector<NamedTensor> tensors;
    std::vector<Optimizer> optimizers;
    uint64_t iteration = 0;

    const NamedTensor* find(const std::string& name) const;
    const Optimizer* find_optimizer(const std::string& name) const;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Parameters and batch-norm running statistics under their model names.
void capture_model(Checkpoint& ckpt, EnhanceModel& model);
void capture_discriminator(Checkpoint& ckpt, const PatchDiscriminator& disc);
/// Copies every model tensor out of `ckpt`; missing or mis-sized entries throw.
void restore_model(EnhanceModel& model, const Checkpoint& ckpt);
void restore_discriminator(PatchDiscriminator& disc, const Checkpoint& ckpt);

/// Builds a model from the checkpoint's `model.*` keys and loads its weights.
EnhanceModel load_model(const Checkpoint& ckpt);

} // namespace csd
