#include "cli.hpp"

#include "csd/checkpoint.hpp"
#include "csd/data.hpp"
#include "csd/eval.hpp"
#include "csd/model.hpp"
#include "csd/retinex.hpp"
#include "csd/rng.hpp"
#include "csd/tensor_io.hpp"
#include "csd/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

namespace fs = std::filesystem;

namespace csd::cli {

namespace {

constexpr const char* kVersion = "1.0.0";

/// Keys that only steer the command line driver.
const std::vector<std::string> kDriverKeys = {"synth.count", "synth.size", "ablate.variants", "ablate.guidance",
                                              "ablate.holdout"};

std::vector<std::string> known_keys() {
    std::vector<std::string> k = ModelConfig::keys();
    for (const auto& list : {SynthConfig::keys(), TrainConfig::keys(), DiscriminatorConfig::keys(), kDriverKeys}) {
        k.insert(k.end(), list.begin(), list.end());
    }
    return k;
}

struct ConfigArgs {
    std::string file;
    std::vector<std::string> sets;

    void attach(CLI::App* app) {
        app->add_option("--config", file, "key = value config file");
        app->add_option("--set", sets, "override, key=value (repeatable)");
    }

    KeyValues load() const {
        KeyValues kv = file.empty() ? KeyValues{} : KeyValues::load(file);
        for (const auto& s : sets) kv.set_assignment(s);
        kv.require_known(known_keys());
        return kv;
    }
};

/// Canonical form of every field the command consumed.
KeyValues resolve(const KeyValues& kv, bool model, bool train, bool disc, bool synth) {
    KeyValues r;
    if (model) ModelConfig::from_kv(kv).to_kv(r);
    if (train) TrainConfig::from_kv(kv).to_kv(r);
    if (disc) DiscriminatorConfig::from_kv(kv).to_kv(r);
    if (synth) SynthConfig::from_kv(kv).to_kv(r);
    for (const auto& k : kDriverKeys) {
        if (kv.has(k)) r.set(k, kv.get(k));
    }
    return r;
}

void emit_resolved(const KeyValues& resolved, const fs::path& dir, const std::string& command, std::ostream& out) {
    const std::string text = "# csd " + std::string(kVersion) + " " + command + "\n" + resolved.to_text();
    out << text;
    if (dir.empty()) return;
    fs::create_directories(dir);
    std::ofstream os(dir / "resolved.cfg", std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / "resolved.cfg").string());
    os << text;
}

bool is_image_file(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

std::vector<fs::path> list_images(const fs::path& in) {
    if (!fs::exists(in)) throw std::runtime_error("input does not exist: " + in.string());
    if (!fs::is_directory(in)) return {in};
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .ppm/.pgm images in " + in.string());
    return files;
}

std::string indexed(int k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", k);
    return buf;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (auto& part : split(s, ',')) {
        const std::string t = trim(part);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

struct PairedSet {
    std::vector<Image> low;
    std::vector<Image> normal;
};

PairedSet load_paired(const fs::path& manifest) {
    PairedSet s;
    for (const auto& e : read_paired_manifest(manifest)) {
        s.low.push_back(load_image(e.low));
        s.normal.push_back(load_image(e.normal));
    }
    return s;
}

std::vector<Image> load_unpaired(const fs::path& manifest) {
    std::vector<Image> out;
    for (const auto& p : read_unpaired_manifest(manifest)) out.push_back(load_image(p));
    return out;
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
    ConfigArgs cfg;
    std::string base = "builtin";
    std::string out;
    int count = -1;
    int size = -1;
    int64_t seed = -1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    KeyValues kv = a.cfg.load();
    if (a.seed >= 0) kv.set("synth.seed", std::to_string(a.seed));
    if (a.count >= 0) kv.set("synth.count", std::to_string(a.count));
    if (a.size >= 0) kv.set("synth.size", std::to_string(a.size));
    const int count = kv.get_int("synth.count", 16);
    const int size = kv.get_int("synth.size", 32);
    if (count < 1) throw ConfigError("synth.count must be >= 1");
    const bool builtin = a.base == "builtin";
    if (builtin && (size < 16 || size % 16 != 0)) throw ConfigError("synth.size must be a positive multiple of 16");
    if (builtin) kv.set("synth.size", std::to_string(size));
    kv.set("synth.count", std::to_string(count));
    const SynthConfig sc = SynthConfig::from_kv(kv);

    const fs::path dir(a.out);
    emit_resolved(resolve(kv, false, false, false, true), dir, "synth", out);
    for (const char* sub : {"low", "normal", "illum"}) fs::create_directories(dir / sub);

    std::vector<PairedSample> samples;
    if (builtin) {
        samples = synth_dataset(count, size, sc, sc.seed);
    } else {
        const auto bases = list_images(a.base);
        for (int k = 0; k < count; ++k) {
            SynthConfig c = sc;
            c.seed = derive_seed(sc.seed, 2 * static_cast<uint64_t>(k) + 1);
            Image base = load_image(bases[static_cast<size_t>(k) % bases.size()]);
            if (base.channels != 3) throw FormatError("base image must be RGB (P6)", 0);
            samples.push_back(synth_pair(base, c));
        }
    }

    std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
    if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
    for (size_t k = 0; k < samples.size(); ++k) {
        const std::string id = indexed(static_cast<int>(k));
        save_image(dir / "low" / (id + ".ppm"), samples[k].low);
        save_image(dir / "normal" / (id + ".ppm"), samples[k].normal);
        save_image(dir / "illum" / (id + ".pgm"), samples[k].oracle_illum);
        manifest << "low/" << id << ".ppm\tnormal/" << id << ".ppm\n";
    }
    out << "wrote " << samples.size() << " pairs to " << dir.string() << "\n";
    return kOk;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
    ConfigArgs cfg;
    std::string mode;
    std::vector<std::string> data;
    std::string out;
    std::string resume;
    int64_t seed = -1;
    int64_t iterations = -1;
};

void write_final(const Checkpoint& c, const fs::path& dir, const TrainReport& report, std::ostream& out) {
    write_checkpoint(dir / "final.csdc", c);
    report.save_csv(dir / "losses.csv");
    if (!report.rows.empty()) {
        char line[160];
        std::snprintf(line, sizeof line, "iterations %lld..%lld  total loss %.6g -> %.6g\n",
                      static_cast<long long>(report.rows.front().iteration),
                      static_cast<long long>(report.rows.back().iteration), report.rows.front().total,
                      report.rows.back().total);
        out << line;
    }
    out << "final checkpoint " << (dir / "final.csdc").string() << "\n";
}

void check_resume_config(const Checkpoint& ckpt, const ModelConfig& mc) {
    if (!(ModelConfig::from_kv(ckpt.config) == mc)) {
        throw ConfigError("resume checkpoint was trained with a different model configuration");
    }
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
    KeyValues kv = a.cfg.load();
    const bool gan = a.mode == "gan";
    if (!kv.has("model.preset")) kv.set("model.preset", gan ? "csdgan" : "csdnet");
    if (a.seed >= 0) kv.set("train.seed", std::to_string(a.seed));
    if (a.iterations >= 0) kv.set("train.iterations", std::to_string(a.iterations));
    const KeyValues resolved = resolve(kv, true, true, gan, false);
    const ModelConfig mc = ModelConfig::from_kv(resolved);
    const TrainConfig tc = TrainConfig::from_kv(resolved);

    if (gan ? a.data.size() != 2 : a.data.size() != 1) {
        throw ConfigError(gan ? "gan mode needs --data <low manifest> --data <normal manifest>"
                              : "paired mode needs exactly one --data manifest");
    }
    for (const auto& m : a.data) {
        if (manifest_is_paired(m) == gan) {
            throw ConfigError("manifest " + m + (gan ? " is paired; gan mode expects unpaired image lists"
                                                     : " is unpaired; paired mode expects low<TAB>normal rows"));
        }
    }

    const fs::path dir(a.out);
    emit_resolved(resolved, dir, "train " + a.mode, out);
    const CheckpointSink sink = [&](const Checkpoint& c) {
        write_checkpoint(dir / ("ckpt_" + std::to_string(c.iteration) + ".csdc"), c);
    };

    EnhanceModel model(mc, tc.seed);
    if (!gan) {
        PairedSet set = load_paired(a.data[0]);
        PairedTrainer trainer(model, std::move(set.low), std::move(set.normal), tc);
        if (!a.resume.empty()) {
            const Checkpoint ckpt = read_checkpoint(a.resume);
            check_resume_config(ckpt, mc);
            trainer.restore(ckpt);
        }
        const TrainReport report = trainer.run(sink);
        write_final(trainer.checkpoint(), dir, report, out);
        return kOk;
    }
    PatchDiscriminator disc(DiscriminatorConfig::from_kv(resolved), derive_seed(tc.seed, 7));
    AdversarialTrainer trainer(model, disc, load_unpaired(a.data[0]), load_unpaired(a.data[1]), tc);
    if (!a.resume.empty()) {
        const Checkpoint ckpt = read_checkpoint(a.resume);
        check_resume_config(ckpt, mc);
        trainer.restore(ckpt);
    }
    const TrainReport report = trainer.run(sink);
    write_final(trainer.checkpoint(), dir, report, out);
    return kOk;
}

// ---- enhance / decompose / guidance ----------------------------------------------

struct ImageArgs {
    std::string ckpt;
    std::string in;
    std::string out;
};

/// Applies `fn` to every input image; failures are reported and counted.
int for_each_image(const ImageArgs& a, std::ostream& out, std::ostream& err,
                   const std::function<void(const Image&, const fs::path&, const std::string&)>& fn) {
    const fs::path dir(a.out);
    fs::create_directories(dir);
    int failed = 0, done = 0;
    for (const auto& file : list_images(a.in)) {
        try {
            fn(load_image(file), dir, file.stem().string());
            ++done;
        } catch (const std::exception& e) {
            err << file.string() << ": " << e.what() << "\n";
            ++failed;
        }
    }
    out << "processed " << done << " image(s)";
    if (failed) out << ", " << failed << " failed";
    out << "\n";
    return failed ? kData : kOk;
}

int cmd_enhance(const ImageArgs& a, bool decompose, std::ostream& out, std::ostream& err) {
    const Checkpoint ckpt = read_checkpoint(a.ckpt);
    EnhanceModel model = load_model(ckpt);
    KeyValues resolved;
    model.config().to_kv(resolved);
    emit_resolved(resolved, a.out, decompose ? "decompose" : "enhance", out);
    return for_each_image(a, out, err, [&](const Image& img, const fs::path& dir, const std::string& stem) {
        const Decomposition d = enhance_image(model, img);
        if (!decompose) {
            save_image(dir / (stem + ".ppm"), d.enhanced);
            return;
        }
        save_image(dir / (stem + "_enhanced.ppm"), d.enhanced);
        save_image(dir / (stem + "_reflectance.ppm"), d.reflectance);
        save_image(dir / (stem + "_illumination.pgm"), d.illumination);
        save_image(dir / (stem + "_reconstruction.ppm"), retinex_reconstruct(d.enhanced, d.illumination));
    });
}

int cmd_guidance(const ImageArgs& a, std::ostream& out, std::ostream& err) {
    emit_resolved(KeyValues{}, a.out, "guidance", out);
    return for_each_image(a, out, err, [](const Image& img, const fs::path& dir, const std::string& stem) {
        save_image(dir / (stem + "_guidance.pgm"), normalize_for_display(illumination_guidance(to_grayscale(img))));
    });
}

// ---- evaluate ------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string out;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    const Checkpoint ckpt = read_checkpoint(a.ckpt);
    KeyValues resolved;
    ModelConfig::from_kv(ckpt.config).to_kv(resolved);
    emit_resolved(resolved, a.out, "evaluate", out);
    MetricReport report = evaluate(fs::path(a.ckpt), fs::path(a.data));
    for (const auto& r : report.rows) {
        if (!r.error.empty()) err << "warning: " << r.id << ": " << r.error << "\n";
    }
    report.save_csv(fs::path(a.out) / "metrics.csv");
    out << "rows " << report.rows.size() - static_cast<size_t>(report.failures) << "  mean psnr "
        << format_metric(report.mean_psnr) << " dB  mean ssim " << format_metric(report.mean_ssim) << "\n";
    if (report.failures) out << "warning: " << report.failures << " row(s) failed and were excluded\n";
    return kOk;
}

// ---- ablate --------------------------------------------------------------------

struct AblateArgs {
    ConfigArgs cfg;
    std::string data;
    std::string eval;
    std::string out;
    std::string variants;
    std::string guidance;
    int holdout = -1;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
    KeyValues kv = a.cfg.load();
    if (!kv.has("model.preset")) kv.set("model.preset", "litecsdnet");
    if (!a.variants.empty()) kv.set("ablate.variants", a.variants);
    if (!a.guidance.empty()) kv.set("ablate.guidance", a.guidance);
    if (a.holdout >= 0) kv.set("ablate.holdout", std::to_string(a.holdout));
    const std::string variants = kv.get_or("ablate.variants", "a,b,c,d,e,f");
    const std::string guidance = kv.get_or("ablate.guidance", "on,off");
    kv.set("ablate.variants", variants);
    kv.set("ablate.guidance", guidance);
    const KeyValues resolved = resolve(kv, true, true, false, false);
    const ModelConfig base = ModelConfig::from_kv(resolved);
    const TrainConfig tc = TrainConfig::from_kv(resolved);

    std::vector<Variant> cells_v;
    for (const auto& v : split_list(variants)) cells_v.push_back(parse_variant(v.size() == 1 ? "arc_" + v : v));
    std::vector<bool> cells_g;
    for (const auto& g : split_list(guidance)) {
        if (g != "on" && g != "off") throw ConfigError("ablate.guidance entries must be on or off, got '" + g + "'");
        cells_g.push_back(g == "on");
    }
    if (cells_v.empty() || cells_g.empty()) throw ConfigError("ablation grid is empty");

    PairedSet train = load_paired(a.data);
    PairedSet held;
    if (!a.eval.empty()) {
        held = load_paired(a.eval);
    } else {
        const int n = kv.get_int("ablate.holdout", 16);
        if (n < 1 || static_cast<size_t>(n) >= train.low.size()) {
            throw ConfigError("ablate.holdout must leave at least one training pair");
        }
        const auto cut = train.low.size() - static_cast<size_t>(n);
        held.low.assign(train.low.begin() + static_cast<std::ptrdiff_t>(cut), train.low.end());
        held.normal.assign(train.normal.begin() + static_cast<std::ptrdiff_t>(cut), train.normal.end());
        train.low.resize(cut);
        train.normal.resize(cut);
    }

    const fs::path dir(a.out);
    emit_resolved(resolved, dir, "ablate", out);
    std::ofstream csv(dir / "ablation.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + (dir / "ablation.csv").string());
    csv << "cell,variant,connection,guidance,params,psnr_db,ssim,error\n";

    int cell = 0, failed = 0;
    for (Variant v : cells_v) {
        for (bool g : cells_g) {
            ++cell;
            ModelConfig mc = ModelConfig::with_variant(base, v);
            mc.guidance = g;
            std::string psnr_s, ssim_s, error;
            try {
                EnhanceModel model(mc, tc.seed);
                PairedTrainer trainer(model, train.low, train.normal, tc);
                trainer.run();
                double ps = 0.0, ss = 0.0;
                for (size_t k = 0; k < held.low.size(); ++k) {
                    const Image outimg = enhance_image(model, held.low[k]).enhanced;
                    ps += psnr(outimg, held.normal[k]);
                    ss += ssim(outimg, held.normal[k]);
                }
                psnr_s = format_metric(ps / static_cast<double>(held.low.size()));
                ssim_s = format_metric(ss / static_cast<double>(held.low.size()));
            } catch (const std::exception& e) {
                error = e.what();
                std::replace(error.begin(), error.end(), ',', ';');
                err << "cell " << cell << " (" << to_string(v) << ", guidance " << (g ? "on" : "off")
                    << ") failed: " << e.what() << "\n";
                ++failed;
            }
            csv << 'S' << cell << ',' << to_string(v) << ',' << to_string(mc.connection) << ','
                << (g ? "on" : "off") << ',' << count_params(mc) << ',' << psnr_s << ',' << ssim_s << ',' << error
                << '\n';
            out << "S" << cell << " " << to_string(v) << " guidance " << (g ? "on " : "off") << "  psnr "
                << (psnr_s.empty() ? "-" : psnr_s) << "  ssim " << (ssim_s.empty() ? "-" : ssim_s) << "\n";
        }
    }
    if (failed) out << failed << " cell(s) failed\n";
    return kOk;
}

// ---- params --------------------------------------------------------------------

struct ParamsArgs {
    ConfigArgs cfg;
    std::string out;
};

int cmd_params(const ParamsArgs& a, std::ostream& out) {
    const KeyValues kv = a.cfg.load();
    const KeyValues resolved = resolve(kv, true, false, false, false);
    const ModelConfig mc = ModelConfig::from_kv(resolved);
    if (!a.out.empty()) emit_resolved(resolved, a.out, "params", out);

    EnhanceModel model(mc, 0);
    std::ostringstream layers;
    layers << "name,shape,count\n";
    char line[200];
    for (const auto& p : model.param_table()) {
        std::snprintf(line, sizeof line, "%-28s %-16s %10lld\n", p.name.c_str(), p.shape.str().c_str(),
                      static_cast<long long>(p.count));
        out << line;
        layers << p.name << ',' << '"' << p.shape.str() << '"' << ',' << p.count << '\n';
    }
    const int64_t total = count_params(model);
    std::snprintf(line, sizeof line, "%-28s %-16s %10lld\n\n", "total", "", static_cast<long long>(total));
    out << line;
    layers << "total,," << total << '\n';

    // Totals for the named presets next to the published reference sizes.
    const std::vector<std::pair<std::string, double>> presets = {
        {"csdnet", 17.2948}, {"litecsdnet", 0.0602}, {"slitecsdnet", 0.0301}};
    std::ostringstream summary;
    summary << "preset,count,millions,reference_millions\n";
    std::map<std::string, int64_t> counts;
    out << "preset          count     millions  reference\n";
    for (const auto& [name, ref] : presets) {
        const int64_t n = count_params(ModelConfig::preset(name));
        counts[name] = n;
        std::snprintf(line, sizeof line, "%-12s %10lld %10.4fM %9.4fM\n", name.c_str(), static_cast<long long>(n),
                      static_cast<double>(n) / 1e6, ref);
        out << line;
        summary << name << ',' << n << ',' << format_float(static_cast<double>(n) / 1e6) << ',' << ref << '\n';
    }
    const double slite_lite = static_cast<double>(counts["slitecsdnet"]) / static_cast<double>(counts["litecsdnet"]);
    const double lite_full = static_cast<double>(counts["litecsdnet"]) / static_cast<double>(counts["csdnet"]);
    std::snprintf(line, sizeof line, "ratio slitecsdnet/litecsdnet %.4f (reference 0.5000)\n", slite_lite);
    out << line;
    std::snprintf(line, sizeof line, "ratio litecsdnet/csdnet      %.4f (reference %.4f)\n", lite_full,
                  0.0602 / 17.2948);
    out << line;

    if (!a.out.empty()) {
        std::ofstream(fs::path(a.out) / "params.csv", std::ios::binary) << layers.str();
        std::ofstream(fs::path(a.out) / "presets.csv", std::ios::binary) << summary.str();
    }
    return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Context-sensitive decomposition low-light enhancement toolkit", "csd"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate synthetic low/normal pairs with oracle illumination");
    synth.cfg.attach(s);
    s->add_option("--base", synth.base, "directory of RGB base images, or 'builtin'");
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--count", synth.count, "number of pairs");
    s->add_option("--size", synth.size, "extent of builtin bases (multiple of 16)");
    s->add_option("--seed", synth.seed, "generator seed");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "train a model (paired or adversarial)");
    train.cfg.attach(t);
    t->add_option("--mode", train.mode, "paired | gan")->required()->check(CLI::IsMember({"paired", "gan"}));
    t->add_option("--data", train.data, "paired manifest, or low then normal image lists for gan")->required();
    t->add_option("--out", train.out, "output directory")->required();
    t->add_option("--resume", train.resume, "checkpoint to continue from");
    t->add_option("--seed", train.seed, "training seed");
    t->add_option("--iterations", train.iterations, "total iterations");

    ImageArgs enhance;
    auto* e = app.add_subcommand("enhance", "enhance an image or a directory of images");
    e->add_option("--ckpt", enhance.ckpt, "checkpoint")->required();
    e->add_option("--in", enhance.in, "image file or directory")->required();
    e->add_option("--out", enhance.out, "output directory")->required();

    ImageArgs decompose;
    auto* d = app.add_subcommand("decompose", "write enhanced, reflectance, illumination and reconstruction");
    d->add_option("--ckpt", decompose.ckpt, "checkpoint")->required();
    d->add_option("--in", decompose.in, "image file or directory")->required();
    d->add_option("--out", decompose.out, "output directory")->required();

    ImageArgs guidance;
    auto* g = app.add_subcommand("guidance", "export the normalized illumination guidance map");
    g->add_option("--in", guidance.in, "image file or directory")->required();
    g->add_option("--out", guidance.out, "output directory")->required();

    EvalArgs evaluate_args;
    auto* v = app.add_subcommand("evaluate", "PSNR/SSIM of a checkpoint on a paired manifest");
    v->add_option("--ckpt", evaluate_args.ckpt, "checkpoint")->required();
    v->add_option("--data", evaluate_args.data, "paired manifest")->required();
    v->add_option("--out", evaluate_args.out, "output directory")->required();

    AblateArgs ablate;
    auto* ab = app.add_subcommand("ablate", "train and score every (variant, guidance) cell");
    ablate.cfg.attach(ab);
    ab->add_option("--data", ablate.data, "paired training manifest")->required();
    ab->add_option("--eval", ablate.eval, "paired held-out manifest (default: split off --holdout rows)");
    ab->add_option("--holdout", ablate.holdout, "rows held out when --eval is absent");
    ab->add_option("--out", ablate.out, "output directory")->required();
    ab->add_option("--variants", ablate.variants, "comma list of a..f");
    ab->add_option("--guidance", ablate.guidance, "comma list of on/off");

    ParamsArgs params;
    auto* p = app.add_subcommand("params", "per-layer parameter report");
    params.cfg.attach(p);
    p->add_option("--out", params.out, "directory for CSV reports");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (s->parsed()) return cmd_synth(synth, out);
        if (t->parsed()) return cmd_train(train, out);
        if (e->parsed()) return cmd_enhance(enhance, false, out, err);
        if (d->parsed()) return cmd_enhance(decompose, true, out, err);
        if (g->parsed()) return cmd_guidance(guidance, out, err);
        if (v->parsed()) return cmd_evaluate(evaluate_args, out, err);
        if (ab->parsed()) return cmd_ablate(ablate, out, err);
        if (p->parsed()) return cmd_params(params, out);
    } catch (const ConfigError& ex) {
        err << "config error: " << ex.what() << "\n";
        return kUsage;
    } catch (const NumericError& ex) {
        err << "numerical abort: " << ex.what() << "\n";
        return kNumeric;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kData;
    }
    return kUsage;
}

} // namespace csd::cli
