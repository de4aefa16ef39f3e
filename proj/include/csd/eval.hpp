#pragma once

#include "csd/image.hpp"
#include "csd/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace csd {

/// 10*log10(peak^2 / MSE) over all channels; +inf when the images are equal.
double psnr(const Image& a, const Image& b, double peak = 1.0);

inline constexpr int kSsimWindow = 8;

/// Mean SSIM over every 8x8 window (stride 1) of the luma planes, with
/// uniform weights and population (co)variances.
double ssim(const Image& a, const Image& b, double peak = 1.0);

/// "inf" for the infinite PSNR sentinel, otherwise fixed precision.
std::string format_metric(double v);

struct Decomposition {
    Image enhanced;
    Image reflectance;
    Image illumination;
};

/// Inference on one image of any extent: 1-channel input is replicated to
/// RGB, then padded to a multiple of 16 and cropped back.
Decomposition enhance_image(EnhanceModel& model, const Image& low);

struct MetricRow {
    std::string id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    std::string error; // non-empty when the row failed
};

struct MetricReport {
    std::vector<MetricRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    int failures = 0;
    uint64_t fingerprint = 0;

    /// Recomputes the means over rows without an error.
    void aggregate();
    /// Header `id,psnr_db,ssim`; failed rows are omitted.
    std::string to_csv() const;
    void save_csv(const std::filesystem::path& path) const;
};

using Enhancer = std::function<Image(const Image&)>;

/// Scores `enhancer(low)` against the normal image of each manifest row,
/// in manifest order. Unreadable rows are recorded and skipped.
MetricReport evaluate(const Enhancer& enhancer, const std::filesystem::path& manifest);
MetricReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest);

} // namespace csd
