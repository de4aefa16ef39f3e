#include "csd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace csd {

void optimizer_step(std::vector<Tensor>& params, OptState& state, const OptimizerConfig& cfg) {
    if (cfg.kind == OptimizerKind::sgd) {
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            auto w = p.data();
            auto g = p.grad();
            for (size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * g[i];
        }
        return;
    }
    if (state.m.size() != params.size()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t k = 0; k < params.size(); ++k) {
            state.m[k].assign(static_cast<size_t>(params[k].numel()), 0.0f);
            state.v[k].assign(static_cast<size_t>(params[k].numel()), 0.0f);
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step));
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k];
        if (!p.has_grad()) continue;
        auto w = p.data();
        auto g = p.grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != w.size()) throw std::logic_error("optimizer state does not match parameter " + std::to_string(k));
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw std::invalid_argument("unknown optimizer '" + s + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

} // namespace csd
