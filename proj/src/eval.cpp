#include "csd/eval.hpp"
#include "csd/checkpoint.hpp"
#include "csd/data.hpp"
#include "csd/retinex.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace csd {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_extent(b) || a.channels != b.channels) {
        throw ShapeError(std::string(what) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.channels) + ")");
    }
}

Image luma(const Image& img) { return img.channels == 1 ? img : to_grayscale(img); }

Image to_rgb(const Image& img) {
    if (img.channels == 3) return img;
    Image out(img.height, img.width, 3);
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        for (int c = 0; c < 3; ++c) out.pixels[i * 3 + static_cast<size_t>(c)] = img.pixels[i];
    }
    return out;
}

} // namespace

double psnr(const Image& a, const Image& b, double peak) {
    require_same(a, b, "psnr");
    if (a.pixels.empty()) throw ShapeError("psnr: empty image");
    double sum = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.pixels.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Image& a, const Image& b, double peak) {
    require_same(a, b, "ssim");
    if (a.height < kSsimWindow || a.width < kSsimWindow) {
        throw ShapeError("ssim: extents must be at least 8x8");
    }
    const Image x = luma(a);
    const Image y = luma(b);
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const double n = kSsimWindow * kSsimWindow;
    double total = 0.0;
    int64_t windows = 0;
    for (int r = 0; r + kSsimWindow <= x.height; ++r) {
        for (int c = 0; c + kSsimWindow <= x.width; ++c) {
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (int i = 0; i < kSsimWindow; ++i) {
                for (int j = 0; j < kSsimWindow; ++j) {
                    const double u = x.at(r + i, c + j);
                    const double v = y.at(r + i, c + j);
                    sx += u;
                    sy += v;
                    sxx += u * u;
                    syy += v * v;
                    sxy += u * v;
                }
            }
            const double mx = sx / n, my = sy / n;
            const double vx = sxx / n - mx * mx;
            const double vy = syy / n - my * my;
            const double cov = sxy / n - mx * my;
            total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

Decomposition enhance_image(EnhanceModel& model, const Image& low) {
    NoGradGuard guard;
    const PaddedImage padded = pad_to_multiple(to_rgb(low), 16);
    ForwardResult r = model.forward(image_to_tensor(padded.image), false);
    Decomposition out;
    out.enhanced = crop_back(tensor_to_image(r.enhanced), padded.orig_height, padded.orig_width);
    out.reflectance = crop_back(tensor_to_image(r.reflectance), padded.orig_height, padded.orig_width);
    out.illumination = crop_back(tensor_to_image(r.illumination), padded.orig_height, padded.orig_width);
    return out;
}

void MetricReport::aggregate() {
    double ps = 0.0, ss = 0.0;
    int ok = 0;
    failures = 0;
    for (const auto& r : rows) {
        if (!r.error.empty()) {
            ++failures;
            continue;
        }
        ps += r.psnr_db;
        ss += r.ssim;
        ++ok;
    }
    mean_psnr = ok ? ps / ok : 0.0;
    mean_ssim = ok ? ss / ok : 0.0;
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << "id,psnr_db,ssim\n";
    for (const auto& r : rows) {
        if (!r.error.empty()) continue;
        os << r.id << ',' << format_metric(r.psnr_db) << ',' << format_metric(r.ssim) << '\n';
    }
    return os.str();
}

void MetricReport::save_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << to_csv();
}

MetricReport evaluate(const Enhancer& enhancer, const std::filesystem::path& manifest) {
    MetricReport report;
    for (const auto& entry : read_paired_manifest(manifest)) {
        MetricRow row;
        row.id = entry.low.filename().string();
        try {
            const Image low = load_image(entry.low);
            const Image gt = load_image(entry.normal);
            const Image out = enhancer(low);
            row.psnr_db = psnr(out, gt);
            row.ssim = ssim(out, gt);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    report.aggregate();
    return report;
}

MetricReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest) {
    const Checkpoint ckpt = read_checkpoint(checkpoint);
    EnhanceModel model = load_model(ckpt);
    MetricReport report = evaluate([&](const Image& low) { return enhance_image(model, low).enhanced; }, manifest);
    const std::string text = ckpt.config.to_text();
    std::vector<float> bytes(text.begin(), text.end());
    report.fingerprint = content_hash(bytes);
    return report;
}

} // namespace csd
