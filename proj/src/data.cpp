#include "csd/data.hpp"
#include "csd/rng.hpp"
#include "csd/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace csd {

namespace fs = std::filesystem;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Header tokenizer: whitespace and '#' comments between fields.
class HeaderReader {
public:
    explicit HeaderReader(const std::string& bytes) : b_(bytes) {}

    int next_int(const char* what) {
        skip();
        const size_t start = pos_;
        if (pos_ >= b_.size()) throw FormatError(std::string("truncated header while reading ") + what, pos_);
        long v = 0;
        while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
            v = v * 10 + (b_[pos_] - '0');
            if (v > 1'000'000'000) throw FormatError(std::string("header value too large: ") + what, start);
            ++pos_;
        }
        if (pos_ == start) throw FormatError(std::string("expected integer for ") + what, start);
        return static_cast<int>(v);
    }

    size_t pos() const { return pos_; }
    void advance() { ++pos_; }

private:
    void skip() {
        while (pos_ < b_.size()) {
            if (is_space(b_[pos_])) {
                ++pos_;
            } else if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::string& b_;
    size_t pos_ = 2;
};

float smoothstep(float e0, float e1, float x) {
    const float t = std::clamp((x - e0) / (e1 - e0), 0.0f, 1.0f);
    return t * t * (3.0f - 2.0f * t);
}

} // namespace

Image decode_pnm(const std::string& bytes) {
    if (bytes.size() < 2) throw FormatError("missing PNM magic", 0);
    int channels = 0;
    if (bytes[0] == 'P' && bytes[1] == '6') {
        channels = 3;
    } else if (bytes[0] == 'P' && bytes[1] == '5') {
        channels = 1;
    } else {
        throw FormatError("unsupported magic (expected P5 or P6)", 0);
    }
    HeaderReader hr(bytes);
    const int width = hr.next_int("width");
    const int height = hr.next_int("height");
    const size_t maxval_at = hr.pos();
    const int maxval = hr.next_int("maxval");
    if (width <= 0 || height <= 0) throw FormatError("image extents must be positive", maxval_at);
    if (maxval != 255) throw FormatError("unsupported maxval " + std::to_string(maxval) + " (only 255)", maxval_at);
    if (hr.pos() >= bytes.size() || !is_space(bytes[hr.pos()])) {
        throw FormatError("expected a single whitespace byte after maxval", hr.pos());
    }
    hr.advance();
    const size_t payload = static_cast<size_t>(width) * height * channels;
    if (bytes.size() - hr.pos() < payload) {
        throw FormatError("truncated payload: need " + std::to_string(payload) + " bytes, have " +
                              std::to_string(bytes.size() - hr.pos()),
                          bytes.size());
    }
    Image img(height, width, channels);
    const auto* src = reinterpret_cast<const unsigned char*>(bytes.data() + hr.pos());
    for (size_t i = 0; i < payload; ++i) img.pixels[i] = static_cast<float>(src[i]) / 255.0f;
    return img;
}

Image load_image(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open image " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    try {
        return decode_pnm(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

std::string encode_pnm(const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("PNM supports 1 or 3 channels");
    std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.pixels.size());
    for (float v : img.pixels) {
        const float c = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
    }
    return out;
}

void save_image(const fs::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write image " + path.string());
    const std::string bytes = encode_pnm(img);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

void SynthConfig::validate() const {
    if (!(i_min > 0.0f && i_min <= i_max && i_max <= 1.0f)) {
        throw ConfigError("synth: need 0 < i_min <= i_max <= 1");
    }
    if (field_grid < 2) throw ConfigError("synth.field_grid must be >= 2");
    if (!(gamma > 0.0f)) throw ConfigError("synth.gamma must be positive");
    if (!(noise_sigma >= 0.0f)) throw ConfigError("synth.noise_sigma must be >= 0");
}

std::vector<std::string> SynthConfig::keys() {
    return {"synth.i_min", "synth.i_max", "synth.field_grid", "synth.gamma", "synth.noise_sigma", "synth.seed"};
}

void SynthConfig::to_kv(KeyValues& kv) const {
    kv.set("synth.i_min", format_float(i_min));
    kv.set("synth.i_max", format_float(i_max));
    kv.set("synth.field_grid", std::to_string(field_grid));
    kv.set("synth.gamma", format_float(gamma));
    kv.set("synth.noise_sigma", format_float(noise_sigma));
    kv.set("synth.seed", std::to_string(seed));
}

SynthConfig SynthConfig::from_kv(const KeyValues& kv) {
    SynthConfig c;
    c.i_min = static_cast<float>(kv.get_double("synth.i_min", c.i_min));
    c.i_max = static_cast<float>(kv.get_double("synth.i_max", c.i_max));
    c.field_grid = kv.get_int("synth.field_grid", c.field_grid);
    c.gamma = static_cast<float>(kv.get_double("synth.gamma", c.gamma));
    c.noise_sigma = static_cast<float>(kv.get_double("synth.noise_sigma", c.noise_sigma));
    c.seed = static_cast<uint64_t>(kv.get_i64("synth.seed", static_cast<int64_t>(c.seed)));
    c.validate();
    return c;
}

PairedSample synth_pair(const Image& base, const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int g = cfg.field_grid;
    std::vector<double> grid(static_cast<size_t>(g) * g);
    for (double& v : grid) v = rng.uniform(cfg.i_min, cfg.i_max);

    PairedSample s;
    s.seed = cfg.seed;
    s.gamma = cfg.gamma;
    s.noise_sigma = cfg.noise_sigma;
    s.normal = base;
    s.oracle_illum = Image(base.height, base.width, 1);
    for (int y = 0; y < base.height; ++y) {
        const double gy = base.height > 1 ? static_cast<double>(y) * (g - 1) / (base.height - 1) : 0.0;
        const int y0 = std::min(static_cast<int>(gy), g - 2);
        const double fy = gy - y0;
        for (int x = 0; x < base.width; ++x) {
            const double gx = base.width > 1 ? static_cast<double>(x) * (g - 1) / (base.width - 1) : 0.0;
            const int x0 = std::min(static_cast<int>(gx), g - 2);
            const double fx = gx - x0;
            auto at = [&](int yy, int xx) { return grid[static_cast<size_t>(yy) * g + xx]; };
            const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                             fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            s.oracle_illum.at(y, x) = static_cast<float>(std::pow(v, static_cast<double>(cfg.gamma)));
        }
    }
    s.low = Image(base.height, base.width, base.channels);
    Rng noise(derive_seed(cfg.seed, 1));
    for (int y = 0; y < base.height; ++y) {
        for (int x = 0; x < base.width; ++x) {
            const float illum = s.oracle_illum.at(y, x);
            for (int c = 0; c < base.channels; ++c) {
                float v = base.at(y, x, c) * illum;
                if (cfg.noise_sigma > 0.0f) v += static_cast<float>(noise.normal() * cfg.noise_sigma);
                s.low.at(y, x, c) = v;
            }
        }
    }
    s.low.clamp01();
    return s;
}

Image builtin_base(uint64_t seed, int height, int width) {
    Rng rng(seed);
    Image img(height, width, 3);
    auto color = [&](double lo, double hi) {
        return std::array<float, 3>{static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi)),
                                    static_cast<float>(rng.uniform(lo, hi))};
    };
    // Background: linear gradient between two colours along a random direction.
    const auto c0 = color(0.15, 0.9);
    const auto c1 = color(0.15, 0.9);
    const double angle = rng.uniform(0.0, 6.283185307179586);
    const double dx = std::cos(angle), dy = std::sin(angle);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double u = ((x / static_cast<double>(width) - 0.5) * dx + (y / static_cast<double>(height) - 0.5) * dy) + 0.5;
            const float t = static_cast<float>(std::clamp(u, 0.0, 1.0));
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = (1 - t) * c0[c] + t * c1[c];
        }
    }
    // Checker or stripe patch.
    {
        const int ph = height / 2, pw = width / 2;
        const int py = static_cast<int>(rng.below(static_cast<uint64_t>(height - ph + 1)));
        const int px = static_cast<int>(rng.below(static_cast<uint64_t>(width - pw + 1)));
        const int cell = 2 + static_cast<int>(rng.below(4));
        const bool stripes = rng.uniform() < 0.5;
        const auto ca = color(0.05, 0.95);
        const auto cb = color(0.05, 0.95);
        for (int y = py; y < py + ph; ++y) {
            for (int x = px; x < px + pw; ++x) {
                const bool odd = stripes ? ((x / cell) % 2 == 1) : (((x / cell) + (y / cell)) % 2 == 1);
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = odd ? ca[c] : cb[c];
            }
        }
    }
    // Soft blobs.
    const int blobs = 2 + static_cast<int>(rng.below(3));
    for (int k = 0; k < blobs; ++k) {
        const double cy = rng.uniform(0.0, height), cx = rng.uniform(0.0, width);
        const double r = rng.uniform(0.12, 0.3) * std::min(height, width);
        const auto cc = color(0.05, 0.95);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double d = std::hypot(y - cy, x - cx);
                const float a = 1.0f - smoothstep(static_cast<float>(0.7 * r), static_cast<float>(r), static_cast<float>(d));
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = (1 - a) * img.at(y, x, c) + a * cc[c];
            }
        }
    }
    img.clamp01();
    return img;
}

std::vector<PairedSample> synth_dataset(int count, int size, const SynthConfig& cfg, uint64_t seed) {
    std::vector<PairedSample> out;
    out.reserve(static_cast<size_t>(count));
    for (int k = 0; k < count; ++k) {
        SynthConfig c = cfg;
        c.seed = derive_seed(seed, 2 * static_cast<uint64_t>(k) + 1);
        out.push_back(synth_pair(builtin_base(derive_seed(seed, 2 * static_cast<uint64_t>(k)), size, size), c));
    }
    return out;
}

PaddedImage pad_to_multiple(const Image& img, int k) {
    if (k != 8 && k != 16) throw std::invalid_argument("pad_to_multiple: k must be 8 or 16");
    const int h = (img.height + k - 1) / k * k;
    const int w = (img.width + k - 1) / k * k;
    PaddedImage p{Image(h, w, img.channels), img.height, img.width};
    for (int y = 0; y < h; ++y) {
        const int sy = std::min(y, img.height - 1);
        for (int x = 0; x < w; ++x) {
            const int sx = std::min(x, img.width - 1);
            for (int c = 0; c < img.channels; ++c) p.image.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return p;
}

Image crop_back(const Image& img, int height, int width) {
    if (height > img.height || width > img.width) throw std::invalid_argument("crop_back: target larger than image");
    Image out(height, width, img.channels);
    for (int y = 0; y < height; ++y) {
        std::copy_n(img.pixels.begin() + static_cast<ptrdiff_t>(y) * img.width * img.channels,
                    static_cast<size_t>(width) * img.channels,
                    out.pixels.begin() + static_cast<ptrdiff_t>(y) * width * img.channels);
    }
    return out;
}

std::vector<PatchPos> patch_positions(int height, int width, int count, int size, uint64_t seed) {
    if (size <= 0 || size % 8 != 0) throw std::invalid_argument("patch size must be a positive multiple of 8");
    if (size > std::min(height, width)) {
        throw std::invalid_argument("patch size " + std::to_string(size) + " exceeds image extent " +
                                    std::to_string(height) + "x" + std::to_string(width));
    }
    Rng rng(seed);
    std::vector<PatchPos> out(static_cast<size_t>(count));
    for (auto& p : out) {
        p.y = static_cast<int>(rng.below(static_cast<uint64_t>(height - size + 1)));
        p.x = static_cast<int>(rng.below(static_cast<uint64_t>(width - size + 1)));
    }
    return out;
}

std::vector<Patch> sample_patches(const Image& img, int count, int size, uint64_t seed) {
    std::vector<Patch> out;
    for (const PatchPos& p : patch_positions(img.height, img.width, count, size, seed)) {
        Patch patch{Image(size, size, img.channels), p.y, p.x};
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                for (int c = 0; c < img.channels; ++c) patch.image.at(y, x, c) = img.at(p.y + y, p.x + x, c);
            }
        }
        out.push_back(std::move(patch));
    }
    return out;
}

namespace {

std::vector<std::string> manifest_lines(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read manifest " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        lines.push_back(line);
    }
    return lines;
}

fs::path resolve(const fs::path& manifest, const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q : manifest.parent_path() / q;
}

} // namespace

std::vector<PairedEntry> read_paired_manifest(const fs::path& path) {
    std::vector<PairedEntry> out;
    int lineno = 0;
    for (const auto& line : manifest_lines(path)) {
        ++lineno;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": paired manifest line needs low<TAB>normal");
        }
        out.push_back({resolve(path, trim(line.substr(0, tab))), resolve(path, trim(line.substr(tab + 1)))});
    }
    return out;
}

std::vector<fs::path> read_unpaired_manifest(const fs::path& path) {
    std::vector<fs::path> out;
    int lineno = 0;
    for (const auto& line : manifest_lines(path)) {
        ++lineno;
        if (line.find('\t') != std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unpaired manifest line contains a TAB");
        }
        out.push_back(resolve(path, trim(line)));
    }
    return out;
}

bool manifest_is_paired(const fs::path& path) {
    const auto lines = manifest_lines(path);
    return !lines.empty() && lines.front().find('\t') != std::string::npos;
}

} // namespace csd
