#include "csd/losses.hpp"
#include "csd/retinex.hpp"
#include "csd/rng.hpp"
#include "csd/tensor_io.hpp"

#include <fstream>
#include <stdexcept>

namespace csd {

namespace {

Tensor weighted(const Tensor& term, float w) { return mul_scalar(term, w); }

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

} // namespace

void LossWeights::validate() const {
    for (float w : {w_mse, w_perc, w_smooth, w_adv, w_recon}) {
        if (!(w >= 0.0f)) throw ConfigError("loss weights must be >= 0");
    }
    if (w_mse + w_perc + w_smooth + w_adv + w_recon <= 0.0f) throw ConfigError("at least one loss weight must be > 0");
}

std::vector<std::string> LossWeights::keys() {
    return {"loss.w_mse", "loss.w_perc", "loss.w_smooth", "loss.w_adv", "loss.w_recon"};
}

void LossWeights::to_kv(KeyValues& kv) const {
    kv.set("loss.w_mse", format_float(w_mse));
    kv.set("loss.w_perc", format_float(w_perc));
    kv.set("loss.w_smooth", format_float(w_smooth));
    kv.set("loss.w_adv", format_float(w_adv));
    kv.set("loss.w_recon", format_float(w_recon));
}

LossWeights LossWeights::from_kv(const KeyValues& kv) {
    LossWeights w;
    w.w_mse = static_cast<float>(kv.get_double("loss.w_mse", w.w_mse));
    w.w_perc = static_cast<float>(kv.get_double("loss.w_perc", w.w_perc));
    w.w_smooth = static_cast<float>(kv.get_double("loss.w_smooth", w.w_smooth));
    w.w_adv = static_cast<float>(kv.get_double("loss.w_adv", w.w_adv));
    w.w_recon = static_cast<float>(kv.get_double("loss.w_recon", w.w_recon));
    w.validate();
    return w;
}

FeatureExtractor::FeatureExtractor(uint64_t seed, std::vector<int> channels) : seed_(seed), channels_(std::move(channels)) {
    if (channels_.size() != kStages) throw std::invalid_argument("feature extractor needs five stage widths");
    int64_t prev = 3;
    for (int k = 0; k < kStages; ++k) {
        Conv2dParams p = make_conv(prev, channels_[static_cast<size_t>(k)], 3, derive_seed(seed, static_cast<uint64_t>(k)));
        p.weight.set_requires_grad(false);
        p.bias.set_requires_grad(false);
        convs_.push_back(std::move(p));
        prev = channels_[static_cast<size_t>(k)];
    }
}

FeatureExtractor FeatureExtractor::from_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open feature weights " + path.string());
    FeatureExtractor fe;
    fe.seed_ = 0;
    fe.convs_.clear();
    fe.channels_.clear();
    int64_t prev = 3;
    for (int k = 0; k < kStages; ++k) {
        Tensor w = read_tensor(is);
        Tensor b = read_tensor(is);
        const Shape& ws = w.shape();
        if (ws.c() != prev || ws.h() != 3 || ws.w() != 3 || b.numel() != ws.n()) {
            throw FormatError("feature stage " + std::to_string(k) + " has incompatible extents " + ws.str(), 0);
        }
        Conv2dParams p;
        p.weight = w;
        p.bias = Tensor::from(Shape{1, ws.n(), 1, 1}, std::vector<float>(b.data().begin(), b.data().end()));
        fe.convs_.push_back(std::move(p));
        fe.channels_.push_back(static_cast<int>(ws.n()));
        prev = ws.n();
    }
    return fe;
}

void FeatureExtractor::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (const auto& c : convs_) {
        write_tensor(os, c.weight);
        write_tensor(os, c.bias);
    }
}

Tensor FeatureExtractor::forward(const Tensor& x) const {
    Tensor h = x;
    for (size_t k = 0; k < convs_.size(); ++k) {
        h = relu(conv2d(h, convs_[k], 1, 1));
        if (k + 1 < convs_.size()) h = maxpool2x2(h);
    }
    return h;
}

Tensor mse_loss(const Tensor& out, const Tensor& gt) {
    require_same(out, gt, "mse_loss");
    return mean_all(square(sub(out, gt)));
}

Tensor perceptual_loss(const Tensor& a, const Tensor& b, const FeatureExtractor& fe) {
    require_same(a, b, "perceptual_loss");
    return mean_all(abs(sub(fe.forward(a), fe.forward(b))));
}

Tensor smooth_l1_illum(const Tensor& illumination, const Tensor& gray) {
    require_same(illumination, gray, "smooth_l1_illum");
    return mean_all(smooth_l1(sub(illumination, gray)));
}

Tensor reconstruction_loss(const Tensor& low, const Tensor& reflectance, const Tensor& illumination) {
    return mse_loss(retinex_reconstruct(reflectance, illumination), low);
}

LossTerms csdnet_loss(const ForwardResult& result, const Tensor& low, const Tensor& gt, const FeatureExtractor& fe,
                      const LossWeights& w, Connection connection) {
    LossTerms t;
    t.mse = mse_loss(result.enhanced, gt);
    t.perceptual = perceptual_loss(result.enhanced, gt, fe);
    t.smooth = smooth_l1_illum(result.illumination, result.gray);
    Tensor total = add(add(weighted(t.mse, w.w_mse), weighted(t.perceptual, w.w_perc)), weighted(t.smooth, w.w_smooth));
    if (connection == Connection::reconstruction_loss) {
        t.recon = reconstruction_loss(low, result.reflectance, result.illumination);
        total = add(total, weighted(t.recon, w.w_recon));
    }
    t.total = total;
    return t;
}

AdvLosses relativistic_losses(const Tensor& real_scores, const Tensor& fake_scores) {
    Tensor sr = mean_per_item(real_scores);
    Tensor sf = mean_per_item(fake_scores);
    Tensor er = broadcast_to(mean_all(sr), sf.shape());
    Tensor ef = broadcast_to(mean_all(sf), sr.shape());
    Tensor r_vs_f = sub(sr, ef); // D(z_r) - E[D(z_f)]
    Tensor f_vs_r = sub(sf, er); // D(z_f) - E[D(z_r)]
    AdvLosses out;
    out.d_loss = add(mean_all(square(add_scalar(r_vs_f, -1.0f))), mean_all(square(f_vs_r)));
    out.g_loss = add(mean_all(square(add_scalar(f_vs_r, -1.0f))), mean_all(square(r_vs_f)));
    return out;
}

AdvLosses adversarial_losses(const Scorer& disc, const AdvBatch& batch) {
    if (!batch.real_images.defined() || !batch.fake_images.defined()) {
        throw std::invalid_argument("adversarial_losses: empty batch");
    }
    AdvLosses total = relativistic_losses(disc(batch.real_images), disc(batch.fake_images));
    if (batch.real_patches.size() != batch.fake_patches.size()) {
        throw std::invalid_argument("adversarial_losses: real and fake patch counts differ");
    }
    if (batch.real_patches.empty()) return total;
    Tensor d_local, g_local;
    for (size_t k = 0; k < batch.real_patches.size(); ++k) {
        AdvLosses slot = relativistic_losses(disc(batch.real_patches[k]), disc(batch.fake_patches[k]));
        d_local = k == 0 ? slot.d_loss : add(d_local, slot.d_loss);
        g_local = k == 0 ? slot.g_loss : add(g_local, slot.g_loss);
    }
    const float inv = 1.0f / static_cast<float>(batch.real_patches.size());
    total.d_loss = add(total.d_loss, mul_scalar(d_local, inv));
    total.g_loss = add(total.g_loss, mul_scalar(g_local, inv));
    return total;
}

LossTerms csdgan_loss(const ForwardResult& result, const Tensor& low, const FeatureExtractor& fe, const Tensor& g_loss,
                      const LossWeights& w) {
    LossTerms t;
    t.adv = g_loss;
    t.perceptual = perceptual_loss(low, result.enhanced, fe);
    t.smooth = smooth_l1_illum(result.illumination, result.gray);
    t.total = add(add(weighted(g_loss, w.w_adv), weighted(t.perceptual, w.w_perc)), weighted(t.smooth, w.w_smooth));
    return t;
}

} // namespace csd
