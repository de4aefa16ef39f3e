#pragma once

#include "csd/config.hpp"
#include "csd/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace csd {

// ---- PPM / PGM ------------------------------------------------------------

/// Binary P6 (3 channels) or P5 (1 channel), maxval 255. Values map to v/255.
Image load_image(const std::filesystem::path& path);
Image decode_pnm(const std::string& bytes);
/// Quantizes by round(v*255); a single whitespace byte follows maxval.
void save_image(const std::filesystem::path& path, const Image& img);
std::string encode_pnm(const Image& img);

// ---- Synthetic Retinex pairs ------------------------------------------------

struct SynthConfig {
    float i_min = 0.1f;
    float i_max = 0.6f;
    int field_grid = 4;
    float gamma = 1.0f;
    float noise_sigma = 0.0f;
    uint64_t seed = 0;

    void validate() const;
    void to_kv(KeyValues& kv) const;
    static SynthConfig from_kv(const KeyValues& kv);
    static std::vector<std::string> keys();
};

struct PairedSample {
    Image low;
    Image normal;
    Image oracle_illum; // single channel, in [i_min^gamma, i_max^gamma]
    uint64_t seed = 0;
    float gamma = 1.0f;
    float noise_sigma = 0.0f;
};

/// Smooth random illumination field (bilinear upsampling of a coarse grid)
/// applied to `base`: low = clamp(base * I + noise, 0, 1).
PairedSample synth_pair(const Image& base, const SynthConfig& cfg);

/// Procedural RGB scene: gradients, checkers, soft blobs and stripes mixed
/// by `seed`.
Image builtin_base(uint64_t seed, int height = 32, int width = 32);

/// `count` noise-free pairs from builtin bases, sample k using seeds derived
/// from (seed, k).
std::vector<PairedSample> synth_dataset(int count, int size, const SynthConfig& cfg, uint64_t seed);

// ---- Geometry -----------------------------------------------------------------

struct PaddedImage {
    Image image;
    int orig_height = 0;
    int orig_width = 0;
};

/// Replicate-pads right/bottom up to the next multiple of k (8 or 16).
PaddedImage pad_to_multiple(const Image& img, int k);
Image crop_back(const Image& img, int height, int width);

struct Patch {
    Image image;
    int y = 0;
    int x = 0;
};

struct PatchPos {
    int y = 0;
    int x = 0;
};

/// Seeded uniform top-left corners for `count` size x size windows.
std::vector<PatchPos> patch_positions(int height, int width, int count, int size, uint64_t seed);
std::vector<Patch> sample_patches(const Image& img, int count, int size, uint64_t seed);

// ---- Manifests ---------------------------------------------------------------

struct PairedEntry {
    std::filesystem::path low;
    std::filesystem::path normal;
};

/// `low<TAB>normal` per line; relative paths resolve against the manifest's directory.
std::vector<PairedEntry> read_paired_manifest(const std::filesystem::path& path);
/// One path per line.
std::vector<std::filesystem::path> read_unpaired_manifest(const std::filesystem::path& path);
/// True when the first non-empty line contains a TAB.
bool manifest_is_paired(const std::filesystem::path& path);

} // namespace csd
