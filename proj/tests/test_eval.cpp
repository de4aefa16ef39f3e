#include "csd/checkpoint.hpp"
#include "csd/data.hpp"
#include "csd/eval.hpp"
#include "csd/retinex.hpp"
#include "csd/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace csd;
namespace fs = std::filesystem;

namespace {

Image random_image(int h, int w, int c, uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng r(seed);
    Image img(h, w, c);
    for (auto& v : img.pixels) v = static_cast<float>(r.uniform(lo, hi));
    return img;
}

Image plus(Image img, float d) {
    for (auto& v : img.pixels) v += d;
    return img;
}

// Direct single-window evaluation on an 8x8 luma pair.
double ssim_one_window(const Image& a, const Image& b) {
    const Image ga = to_grayscale(a), gb = to_grayscale(b);
    const double n = 64.0;
    double ma = 0, mb = 0;
    for (int i = 0; i < 64; ++i) {
        ma += ga.pixels[i];
        mb += gb.pixels[i];
    }
    ma /= n;
    mb /= n;
    double va = 0, vb = 0, cov = 0;
    for (int i = 0; i < 64; ++i) {
        va += (ga.pixels[i] - ma) * (ga.pixels[i] - ma);
        vb += (gb.pixels[i] - mb) * (gb.pixels[i] - mb);
        cov += (ga.pixels[i] - ma) * (gb.pixels[i] - mb);
    }
    va /= n;
    vb /= n;
    cov /= n;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

fs::path write_pairs(const fs::path& dir, int count) {
    fs::create_directories(dir / "low");
    fs::create_directories(dir / "normal");
    std::ofstream m(dir / "manifest.txt");
    const auto set = synth_dataset(count, 32, SynthConfig{}, 4);
    for (int i = 0; i < count; ++i) {
        const std::string name = std::to_string(i) + ".ppm";
        save_image(dir / "low" / name, set[static_cast<size_t>(i)].low);
        save_image(dir / "normal" / name, set[static_cast<size_t>(i)].normal);
        m << "low/" << name << "\tnormal/" << name << "\n";
    }
    return dir / "manifest.txt";
}

} // namespace

TEST_SUITE("eval") {

TEST_CASE("psnr oracles") {
    const Image a = random_image(6, 5, 3, 1, 0.0, 0.4);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(format_metric(psnr(a, a)) == "inf");
    CHECK(psnr(plus(a, 0.5f), a) == doctest::Approx(6.0206).epsilon(1e-5));
    CHECK(psnr(plus(a, 0.1f), a) == doctest::Approx(20.0).epsilon(1e-5));
    CHECK(psnr(a, plus(a, 0.1f)) == psnr(plus(a, 0.1f), a));
    double prev = std::numeric_limits<double>::infinity();
    for (float d : {0.01f, 0.05f, 0.1f, 0.3f, 0.5f}) {
        const double p = psnr(plus(a, d), a);
        CHECK(p < prev);
        prev = p;
    }
    CHECK_THROWS_AS(psnr(a, Image(6, 5, 1)), ShapeError);
}

TEST_CASE("ssim oracles") {
    const Image a = random_image(12, 10, 3, 2);
    CHECK(ssim(a, a) == 1.0);
    Image inv = a;
    for (auto& v : inv.pixels) v = 1.0f - v;
    CHECK(ssim(a, inv) < 1.0);
    const Image b = random_image(12, 10, 3, 3);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK_THROWS_AS(ssim(Image(7, 9, 1), Image(7, 9, 1)), ShapeError);

    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const Image x = random_image(8, 8, 3, seed), y = random_image(8, 8, 3, seed + 10);
        CHECK(std::abs(ssim(x, y) - ssim_one_window(x, y)) < 1e-6);
    }
}

TEST_CASE("report aggregates") {
    MetricReport r;
    r.rows = {{"a", 10.0, 0.5, ""}, {"b", 20.0, 0.7, ""}, {"c", 0.0, 0.0, "missing"}};
    r.aggregate();
    CHECK(r.failures == 1);
    CHECK(std::abs(r.mean_psnr - 15.0) < 1e-9);
    CHECK(std::abs(r.mean_ssim - 0.6) < 1e-9);
    const std::string csv = r.to_csv();
    CHECK(csv.rfind("id,psnr_db,ssim\n", 0) == 0);
    CHECK(csv.find("missing") == std::string::npos);
}

TEST_CASE("evaluate with fixed enhancers") {
    TempDir dir("csd_eval_manifest");
    const fs::path manifest = write_pairs(dir.path, 3);

    // Ground truth scored against itself.
    std::vector<Image> normals;
    for (const auto& e : read_paired_manifest(manifest)) normals.push_back(load_image(e.normal));
    size_t next = 0;
    const MetricReport perfect = evaluate([&](const Image&) { return normals[next++]; }, manifest);
    REQUIRE(perfect.rows.size() == 3);
    for (const auto& row : perfect.rows) {
        CHECK(std::isinf(row.psnr_db));
        CHECK(row.ssim == 1.0);
    }

    // Identity reproduces input-versus-truth scores.
    const MetricReport identity = evaluate([](const Image& low) { return low; }, manifest);
    const auto entries = read_paired_manifest(manifest);
    for (size_t i = 0; i < entries.size(); ++i) {
        const Image low = load_image(entries[i].low);
        CHECK(identity.rows[i].psnr_db == psnr(low, normals[i]));
        CHECK(identity.rows[i].ssim == ssim(low, normals[i]));
        CHECK(identity.rows[i].id == entries[i].low.filename().string());
    }
    double mean = 0;
    for (const auto& row : identity.rows) mean += row.psnr_db;
    CHECK(std::abs(identity.mean_psnr - mean / 3) < 1e-9);
}

TEST_CASE("missing files are recorded and skipped") {
    TempDir dir("csd_eval_missing");
    const fs::path manifest = write_pairs(dir.path, 3);
    fs::remove(dir.path / "normal" / "1.ppm");
    const MetricReport r = evaluate([](const Image& low) { return low; }, manifest);
    CHECK(r.rows.size() == 3);
    CHECK(r.failures == 1);
    CHECK_FALSE(r.rows[1].error.empty());
    CHECK(std::abs(r.mean_psnr - (r.rows[0].psnr_db + r.rows[2].psnr_db) / 2) < 1e-9);
}

TEST_CASE("enhance_image keeps any extent") {
    EnhanceModel m(ModelConfig::preset("litecsdnet"), 1);
    const Image low = random_image(30, 47, 3, 5, 0.0, 0.5);
    const Decomposition d = enhance_image(m, low);
    CHECK(d.enhanced.height == 30);
    CHECK(d.enhanced.width == 47);
    CHECK(d.illumination.channels == 1);
    CHECK(d.reflectance.channels == 3);
    for (float v : d.enhanced.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    const Decomposition gray = enhance_image(m, random_image(16, 16, 1, 6));
    CHECK(gray.enhanced.channels == 3);
}

TEST_CASE("evaluate from a checkpoint") {
    TempDir dir("csd_eval_ckpt");
    const fs::path manifest = write_pairs(dir.path, 2);
    EnhanceModel m(ModelConfig::preset("litecsdnet"), 3);
    Checkpoint c;
    m.config().to_kv(c.config);
    capture_model(c, m);
    write_checkpoint(dir.path / "m.csdc", c);
    const MetricReport r = evaluate(dir.path / "m.csdc", manifest);
    CHECK(r.rows.size() == 2);
    CHECK(r.failures == 0);
    CHECK(r.fingerprint == evaluate(dir.path / "m.csdc", manifest).fingerprint);
    const Image low = load_image(dir.path / "low" / "0.ppm");
    CHECK(r.rows[0].psnr_db == psnr(enhance_image(m, low).enhanced, load_image(dir.path / "normal" / "0.ppm")));
}

}
