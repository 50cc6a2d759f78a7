#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uda/image_io.hpp"

namespace uda {

struct DatasetSchema {
    std::vector<std::string> class_names;
    std::vector<std::array<uint8_t, 3>> palette;  // class -> RGB
    std::vector<std::string> channels;            // semantic tags, e.g. R,G,B
    double resolution_cm = 5.0;

    int num_classes() const { return static_cast<int>(class_names.size()); }
    void validate() const;  // >= 2 classes, pairwise-distinct palette colors
};

// The conventional six-class ISPRS labelling schema.
DatasetSchema isprs_schema();

struct PatchOrigin {
    std::string image_id;
    int row = 0;
    int col = 0;
};

// image values live in [-1, 1]; mask holds class indices (absent for
// unlabeled target patches)
struct LabeledPatch {
    int channels = 0, height = 0, width = 0;
    std::vector<float> image;  // C*H*W
    std::optional<std::vector<int>> mask;  // H*W
    PatchOrigin origin;
    std::string split = "train";
};

struct DomainDataset {
    DatasetSchema schema;
    std::vector<LabeledPatch> patches;

    std::vector<size_t> split_indices(const std::string& split) const;
    void validate() const;  // uniform patch geometry, mask values < C, image range
};

// ---- normalization ----
inline float u8_to_norm(uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }
inline uint8_t norm_to_u8(float v) {
    float x = (v + 1.0f) * 127.5f;
    if (x < 0.0f) x = 0.0f;
    if (x > 255.0f) x = 255.0f;
    return static_cast<uint8_t>(x + 0.5f);
}

// ---- tiling ----
enum class TilePolicy { drop, reflect_pad };

// Cut an image (and aligned mask) into tile_size squares. Under drop an image
// smaller than one tile yields an empty list and sets *warned.
std::vector<LabeledPatch> tile(const std::vector<float>& image, int channels, int height, int width,
                               const std::optional<std::vector<int>>& mask, int tile_size,
                               TilePolicy policy, const std::string& image_id,
                               bool* warned = nullptr);

// Stitch reflect_pad tiles of one image back together (unpadded region).
std::vector<float> reassemble(const std::vector<LabeledPatch>& tiles, int channels, int height,
                              int width);

// ---- statistics ----
// Per-class percentage of total pixels; errors on unlabeled patches.
std::vector<double> class_distribution(const DomainDataset& ds);

// ---- palette codecs ----
ImageU8 encode_mask(const std::vector<int>& mask, int height, int width,
                    const std::vector<std::array<uint8_t, 3>>& palette);
std::vector<int> decode_mask(const ImageU8& img, const std::vector<std::array<uint8_t, 3>>& palette);

// ---- dataset directory I/O (manifest.json + PNG patches) ----
void save_dataset(const DomainDataset& ds, const std::string& dir);
DomainDataset load_dataset(const std::string& dir);

// FNV-1a over every mask of the dataset, in patch order; used for the label
// integrity check across pipeline stages.
uint64_t mask_checksum(const DomainDataset& ds);

// ---- synthetic two-domain generator ----
struct SynthConfig {
    int tile_size = 64;
    int num_classes = 6;  // prefix of the ISPRS class list, >= 2
    int source_train = 300;
    int source_test = 100;
    int target_train = 300;
    int target_eval = 100;

    bool sensor_shift = false;
    bool resolution_shift = false;
    bool class_representation_shift = false;

    // sensor factor: channel permutation plus per-channel affine tone curve
    std::array<int, 3> channel_permutation = {1, 2, 0};
    std::array<double, 3> channel_gain = {1.10, 0.92, 1.05};
    std::array<double, 3> channel_bias = {0.04, -0.03, 0.02};

    // resolution factor: 5 cm -> 9 cm simulated as blur + down/up scaling
    double resolution_factor = 5.0 / 9.0;

    // per-class pixel share targets, percent; remainder goes to class 0
    std::vector<double> class_percent_targets = {45.0, 22.0, 12.0, 10.0, 3.0, 8.0};
};

struct SynthResult {
    DomainDataset source;  // fully labeled
    DomainDataset target;  // labels kept for evaluation only
};

SynthResult synth_generate(const SynthConfig& cfg, uint64_t seed);

}  // namespace uda
