#include "csd/trainer.hpp"
#include "csd/data.hpp"
#include "csd/rng.hpp"
#include "csd/tensor_io.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace csd {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

double value_of(const Tensor& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; }

void require_uniform_extent(const std::vector<Image>& images, const Image& ref, const char* what) {
    for (const auto& img : images) {
        if (!img.same_extent(ref)) {
            throw ShapeError(std::string(what) + ": all training images must share one extent (" +
                             std::to_string(ref.height) + "x" + std::to_string(ref.width) + ")");
        }
    }
}

void check_training_set(const std::vector<Image>& low, const std::vector<Image>& normal, bool paired) {
    if (low.empty() || normal.empty()) throw std::invalid_argument("training set is empty");
    if (paired && low.size() != normal.size()) throw std::invalid_argument("paired sets differ in length");
    const Image& ref = low.front();
    if (ref.height % 16 != 0 || ref.width % 16 != 0) {
        throw ShapeError("training extents must be divisible by 16, got " + std::to_string(ref.height) + "x" +
                         std::to_string(ref.width));
    }
    require_uniform_extent(low, ref, "low set");
    require_uniform_extent(normal, ref, "normal set");
}

Tensor gather(const std::vector<Image>& images, const std::vector<int>& idx) {
    std::vector<Image> picked;
    picked.reserve(idx.size());
    for (int i : idx) picked.push_back(images[static_cast<size_t>(i)]);
    return images_to_tensor(picked);
}

void check_terms(const LossTerms& t, const Tensor& d_loss) {
    std::vector<std::pair<std::string, Tensor>> named;
    const std::pair<const char*, const Tensor*> terms[] = {{"mse", &t.mse},     {"perceptual", &t.perceptual},
                                                           {"smooth", &t.smooth}, {"recon", &t.recon},
                                                           {"adv", &t.adv},     {"d_loss", &d_loss},
                                                           {"total", &t.total}};
    for (const auto& [name, tensor] : terms) {
        if (tensor->defined()) named.emplace_back(name, *tensor);
    }
    check_finite(named, "loss term");
}

void check_grads(const std::vector<std::pair<std::string, Tensor>>& params) {
    for (const auto& [name, t] : params) {
        if (t.has_grad() && !all_finite(t.grad())) {
            throw NumericError("non-finite gradient in parameter '" + name + "'");
        }
    }
}

LossRow row_from(int64_t iteration, const LossTerms& t, const Tensor& d_loss, Clock::time_point start) {
    LossRow r;
    r.iteration = iteration;
    r.mse = value_of(t.mse);
    r.perceptual = value_of(t.perceptual);
    r.smooth = value_of(t.smooth);
    r.recon = value_of(t.recon);
    r.adv = value_of(t.adv);
    r.d_loss = value_of(d_loss);
    r.total = value_of(t.total);
    r.wall_ms = elapsed_ms(start);
    return r;
}

void restore_optimizer(OptState& dst, const Checkpoint& ckpt, const std::string& name, size_t param_count) {
    const auto* o = ckpt.find_optimizer(name);
    if (!o) throw FormatError("checkpoint has no optimizer state '" + name + "'", 0);
    if (!o->state.m.empty() && o->state.m.size() != param_count) {
        throw FormatError("optimizer state '" + name + "' covers " + std::to_string(o->state.m.size()) +
                              " tensors, model has " + std::to_string(param_count),
                          0);
    }
    dst = o->state;
}

TrainReport run_loop(int64_t& iteration, int64_t total, int64_t every, const std::function<LossRow()>& step,
                     const std::function<Checkpoint()>& snapshot, const CheckpointSink& sink) {
    TrainReport report;
    while (iteration < total) {
        report.rows.push_back(step());
        if (sink && every > 0 && iteration % every == 0 && iteration < total) sink(snapshot());
    }
    if (sink) sink(snapshot());
    return report;
}

} // namespace

// ---- config ------------------------------------------------------------------

void TrainConfig::validate() const {
    if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(optimizer.lr > 0.0f)) throw ConfigError("train.lr must be > 0");
    if (!(optimizer.beta1 >= 0.0f && optimizer.beta1 < 1.0f)) throw ConfigError("train.beta1 must be in [0, 1)");
    if (!(optimizer.beta2 >= 0.0f && optimizer.beta2 < 1.0f)) throw ConfigError("train.beta2 must be in [0, 1)");
    if (!(optimizer.eps > 0.0f)) throw ConfigError("train.adam_eps must be > 0");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    weights.validate();
}

std::vector<std::string> TrainConfig::keys() {
    std::vector<std::string> k = {"train.iterations", "train.batch_size", "train.seed",   "train.optimizer",
                                  "train.lr",         "train.beta1",      "train.beta2",  "train.adam_eps",
                                  "train.checkpoint_every", "train.feature_seed"};
    for (auto& w : LossWeights::keys()) k.push_back(w);
    return k;
}

void TrainConfig::to_kv(KeyValues& kv) const {
    kv.set("train.iterations", std::to_string(iterations));
    kv.set("train.batch_size", std::to_string(batch_size));
    kv.set("train.seed", std::to_string(seed));
    kv.set("train.optimizer", to_string(optimizer.kind));
    kv.set("train.lr", format_float(optimizer.lr));
    kv.set("train.beta1", format_float(optimizer.beta1));
    kv.set("train.beta2", format_float(optimizer.beta2));
    kv.set("train.adam_eps", format_float(optimizer.eps));
    kv.set("train.checkpoint_every", std::to_string(checkpoint_every));
    kv.set("train.feature_seed", std::to_string(feature_seed));
    weights.to_kv(kv);
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
    TrainConfig c;
    c.iterations = kv.get_i64("train.iterations", c.iterations);
    c.batch_size = kv.get_int("train.batch_size", c.batch_size);
    c.seed = static_cast<uint64_t>(kv.get_i64("train.seed", static_cast<int64_t>(c.seed)));
    if (kv.has("train.optimizer")) c.optimizer.kind = parse_optimizer_kind(kv.get("train.optimizer"));
    c.optimizer.lr = static_cast<float>(kv.get_double("train.lr", c.optimizer.lr));
    c.optimizer.beta1 = static_cast<float>(kv.get_double("train.beta1", c.optimizer.beta1));
    c.optimizer.beta2 = static_cast<float>(kv.get_double("train.beta2", c.optimizer.beta2));
    c.optimizer.eps = static_cast<float>(kv.get_double("train.adam_eps", c.optimizer.eps));
    c.checkpoint_every = kv.get_i64("train.checkpoint_every", c.checkpoint_every);
    c.feature_seed = static_cast<uint64_t>(kv.get_i64("train.feature_seed", static_cast<int64_t>(c.feature_seed)));
    c.weights = LossWeights::from_kv(kv);
    c.validate();
    return c;
}

// ---- report ------------------------------------------------------------------

bool LossRow::same_losses(const LossRow& o) const {
    return iteration == o.iteration && mse == o.mse && perceptual == o.perceptual && smooth == o.smooth &&
           recon == o.recon && adv == o.adv && d_loss == o.d_loss && total == o.total;
}

std::string TrainReport::to_csv() const {
    std::ostringstream os;
    os << "iteration,mse,perceptual,smooth,recon,adv,d_loss,total,wall_ms\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        os << r.iteration << ',' << num(r.mse) << ',' << num(r.perceptual) << ',' << num(r.smooth) << ','
           << num(r.recon) << ',' << num(r.adv) << ',' << num(r.d_loss) << ',' << num(r.total) << ','
           << num(r.wall_ms) << '\n';
    }
    return os.str();
}

void TrainReport::save_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << to_csv();
}

// ---- schedule ----------------------------------------------------------------

std::vector<int> batch_indices(int64_t iteration, int batch_size, int dataset_size, uint64_t seed) {
    if (dataset_size <= 0) throw std::invalid_argument("batch_indices: empty dataset");
    std::vector<int> out;
    out.reserve(static_cast<size_t>(batch_size));
    int64_t cached_epoch = -1;
    std::vector<int> perm(static_cast<size_t>(dataset_size));
    for (int j = 0; j < batch_size; ++j) {
        const int64_t pos = iteration * batch_size + j;
        const int64_t epoch = pos / dataset_size;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), 0);
            Rng rng(derive_seed(seed, static_cast<uint64_t>(epoch)));
            for (size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[rng.below(k)]);
            cached_epoch = epoch;
        }
        out.push_back(perm[static_cast<size_t>(pos % dataset_size)]);
    }
    return out;
}

void check_finite(const std::vector<std::pair<std::string, Tensor>>& named, const char* what) {
    for (const auto& [name, t] : named) {
        if (!all_finite(t.data())) throw NumericError(std::string("non-finite ") + what + " '" + name + "'");
    }
}

double dataset_loss(EnhanceModel& model, const std::vector<Image>& low, const std::vector<Image>& normal,
                    const TrainConfig& cfg) {
    NoGradGuard guard;
    FeatureExtractor fe(cfg.feature_seed);
    double sum = 0.0;
    size_t seen = 0;
    for (size_t begin = 0; begin < low.size(); begin += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(low.size(), begin + static_cast<size_t>(cfg.batch_size));
        std::vector<int> idx(end - begin);
        std::iota(idx.begin(), idx.end(), static_cast<int>(begin));
        Tensor l = gather(low, idx);
        Tensor g = gather(normal, idx);
        ForwardResult res = model.forward(l, false);
        LossTerms t = csdnet_loss(res, l, g, fe, cfg.weights, model.config().connection);
        sum += static_cast<double>(t.total.item()) * static_cast<double>(idx.size());
        seen += idx.size();
    }
    return seen ? sum / static_cast<double>(seen) : 0.0;
}

// ---- paired ------------------------------------------------------------------

PairedTrainer::PairedTrainer(EnhanceModel& model, std::vector<Image> low, std::vector<Image> normal, TrainConfig cfg)
    : model_(model), low_(std::move(low)), normal_(std::move(normal)), cfg_(std::move(cfg)), fe_(cfg_.feature_seed),
      params_(model.parameters()) {
    cfg_.validate();
    check_training_set(low_, normal_, true);
}

LossRow PairedTrainer::step() {
    const auto start = Clock::now();
    const auto idx = batch_indices(iteration_, cfg_.batch_size, static_cast<int>(low_.size()), derive_seed(cfg_.seed, 0));
    Tensor l = gather(low_, idx);
    Tensor g = gather(normal_, idx);

    zero_grads(params_);
    ForwardResult res = model_.forward(l, true);
    LossTerms terms = csdnet_loss(res, l, g, fe_, cfg_.weights, model_.config().connection);
    check_terms(terms, Tensor());
    backward(terms.total);
    check_grads(model_.named_parameters());
    optimizer_step(params_, opt_, cfg_.optimizer);
    check_finite(model_.named_parameters(), "parameter");

    LossRow row = row_from(iteration_, terms, Tensor(), start);
    ++iteration_;
    return row;
}

TrainReport PairedTrainer::run(const CheckpointSink& sink) {
    return run_loop(
        iteration_, cfg_.iterations, cfg_.checkpoint_every, [this] { return step(); }, [this] { return checkpoint(); },
        sink);
}

Checkpoint PairedTrainer::checkpoint() const {
    Checkpoint c;
    capture_model(c, model_);
    cfg_.to_kv(c.config);
    c.optimizers.push_back({"model", opt_});
    c.iteration = static_cast<uint64_t>(iteration_);
    return c;
}

void PairedTrainer::restore(const Checkpoint& ckpt) {
    restore_model(model_, ckpt);
    restore_optimizer(opt_, ckpt, "model", params_.size());
    iteration_ = static_cast<int64_t>(ckpt.iteration);
}

// ---- adversarial -------------------------------------------------------------

AdversarialTrainer::AdversarialTrainer(EnhanceModel& model, PatchDiscriminator& disc, std::vector<Image> low,
                                       std::vector<Image> normal, TrainConfig cfg)
    : model_(model), disc_(disc), low_(std::move(low)), normal_(std::move(normal)), cfg_(std::move(cfg)),
      fe_(cfg_.feature_seed), params_(model.parameters()), disc_params_(disc.parameters()) {
    cfg_.validate();
    check_training_set(low_, normal_, false);
    const int size = disc_.config().patch_size;
    if (size > low_.front().height || size > low_.front().width) {
        throw ShapeError("patch size " + std::to_string(size) + " exceeds the training extent");
    }
}

AdvBatch AdversarialTrainer::make_batch(const Tensor& real, const Tensor& fake) const {
    AdvBatch b;
    b.real_images = real;
    b.fake_images = fake;
    const auto& dc = disc_.config();
    if (dc.patch_count == 0) return b;
    const uint64_t it_seed = derive_seed(derive_seed(cfg_.seed, 2), static_cast<uint64_t>(iteration_));
    const int64_t h = real.shape().h();
    const int64_t w = real.shape().w();
    auto slots = [&](const Tensor& images, uint64_t side) {
        const int64_t n = images.shape().n();
        std::vector<std::vector<Tensor>> per_slot(static_cast<size_t>(dc.patch_count));
        for (int64_t i = 0; i < n; ++i) {
            const uint64_t s = derive_seed(derive_seed(it_seed, side), static_cast<uint64_t>(i));
            const auto pos = patch_positions(static_cast<int>(h), static_cast<int>(w), dc.patch_count, dc.patch_size, s);
            Tensor item = batch_item(images, i);
            for (size_t k = 0; k < pos.size(); ++k) {
                per_slot[k].push_back(crop(item, pos[k].y, pos[k].x, dc.patch_size, dc.patch_size));
            }
        }
        std::vector<Tensor> out;
        for (auto& items : per_slot) out.push_back(concat_batch(items));
        return out;
    };
    b.real_patches = slots(real, 0);
    b.fake_patches = slots(fake, 1);
    return b;
}

LossRow AdversarialTrainer::step() {
    const auto start = Clock::now();
    const int n_low = static_cast<int>(low_.size());
    const int n_normal = static_cast<int>(normal_.size());
    Tensor l = gather(low_, batch_indices(iteration_, cfg_.batch_size, n_low, derive_seed(cfg_.seed, 0)));
    Tensor real = gather(normal_, batch_indices(iteration_, cfg_.batch_size, n_normal, derive_seed(cfg_.seed, 1)));
    const Scorer score = [this](const Tensor& x) { return disc_.forward(x); };

    zero_grads(params_);
    ForwardResult res = model_.forward(l, true);

    // Discriminator step against a detached copy of the generator output.
    zero_grads(disc_params_);
    AdvLosses d_side = adversarial_losses(score, make_batch(real, res.enhanced.detach()));
    check_finite({{"d_loss", d_side.d_loss}}, "loss term");
    backward(d_side.d_loss);
    check_grads(disc_.named_parameters());
    optimizer_step(disc_params_, disc_opt_, cfg_.optimizer);
    check_finite(disc_.named_parameters(), "discriminator parameter");

    // Generator step with the updated discriminator.
    AdvLosses g_side = adversarial_losses(score, make_batch(real, res.enhanced));
    LossTerms terms = csdgan_loss(res, l, fe_, g_side.g_loss, cfg_.weights);
    check_terms(terms, d_side.d_loss);
    backward(terms.total);
    check_grads(model_.named_parameters());
    optimizer_step(params_, opt_, cfg_.optimizer);
    check_finite(model_.named_parameters(), "parameter");
    zero_grads(disc_params_);

    LossRow row = row_from(iteration_, terms, d_side.d_loss, start);
    ++iteration_;
    return row;
}

TrainReport AdversarialTrainer::run(const CheckpointSink& sink) {
    return run_loop(
        iteration_, cfg_.iterations, cfg_.checkpoint_every, [this] { return step(); }, [this] { return checkpoint(); },
        sink);
}

Checkpoint AdversarialTrainer::checkpoint() const {
    Checkpoint c;
    capture_model(c, model_);
    capture_discriminator(c, disc_);
    cfg_.to_kv(c.config);
    c.optimizers.push_back({"model", opt_});
    c.optimizers.push_back({"disc", disc_opt_});
    c.iteration = static_cast<uint64_t>(iteration_);
    return c;
}

void AdversarialTrainer::restore(const Checkpoint& ckpt) {
    restore_model(model_, ckpt);
    restore_discriminator(disc_, ckpt);
    restore_optimizer(opt_, ckpt, "model", params_.size());
    restore_optimizer(disc_opt_, ckpt, "disc", disc_params_.size());
    iteration_ = static_cast<int64_t>(ckpt.iteration);
}

} // namespace csd
