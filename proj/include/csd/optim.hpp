#pragma once

#include "csd/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace csd {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Adam moments, one buffer per parameter in registration order.
struct OptState {
    int64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;

    bool operator==(const OptState&) const = default;
};

/// In-place update of every parameter that has a gradient. Parameters
/// without a gradient are left untouched (and their Adam moments do not move).
void optimizer_step(std::vector<Tensor>& params, OptState& state, const OptimizerConfig& cfg);

void zero_grads(std::vector<Tensor>& params);

OptimizerKind parse_optimizer_kind(const std::string& s);
std::string to_string(OptimizerKind k);

} // namespace csd
