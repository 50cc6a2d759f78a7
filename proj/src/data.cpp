#include "uda/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace uda {

void DatasetSchema::validate() const {
    if (class_names.size() < 2) throw std::invalid_argument("schema: need at least 2 classes");
    if (palette.size() != class_names.size())
        throw std::invalid_argument("schema: palette size does not match class count");
    for (size_t i = 0; i < palette.size(); ++i)
        for (size_t j = i + 1; j < palette.size(); ++j)
            if (palette[i] == palette[j])
                throw std::invalid_argument("schema: palette colors must be pairwise distinct");
}

DatasetSchema isprs_schema() {
    DatasetSchema s;
    s.class_names = {"impervious_surfaces", "building", "low_vegetation", "tree", "car", "clutter"};
    // conventional ISPRS label colors
    s.palette = {{{255, 255, 255}},
                 {{0, 0, 255}},
                 {{0, 255, 255}},
                 {{0, 255, 0}},
                 {{255, 255, 0}},
                 {{255, 0, 0}}};
    s.channels = {"R", "G", "B"};
    s.resolution_cm = 5.0;
    return s;
}

std::vector<size_t> DomainDataset::split_indices(const std::string& split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < patches.size(); ++i)
        if (patches[i].split == split) out.push_back(i);
    return out;
}

void DomainDataset::validate() const {
    schema.validate();
    int C = schema.num_classes();
    for (size_t i = 0; i < patches.size(); ++i) {
        const auto& p = patches[i];
        if (!patches.empty() &&
            (p.height != patches[0].height || p.width != patches[0].width ||
             p.channels != patches[0].channels))
            throw std::invalid_argument("dataset: patch " + std::to_string(i) +
                                        " geometry differs from patch 0");
        if (p.image.size() != static_cast<size_t>(p.channels) * p.height * p.width)
            throw std::invalid_argument("dataset: patch " + std::to_string(i) + " image size mismatch");
        for (float v : p.image)
            if (v < -1.0f || v > 1.0f)
                throw std::invalid_argument("dataset: patch " + std::to_string(i) +
                                            " image value outside [-1,1]");
        if (p.mask) {
            if (p.mask->size() != static_cast<size_t>(p.height) * p.width)
                throw std::invalid_argument("dataset: patch " + std::to_string(i) + " mask size mismatch");
            for (int m : *p.mask)
                if (m < 0 || m >= C)
                    throw std::invalid_argument("dataset: patch " + std::to_string(i) +
                                                " mask value out of range");
        }
    }
}

// ---- tiling ----

static int reflect_index(int i, int n) {
    // mirror without repeating the edge sample
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

std::vector<LabeledPatch> tile(const std::vector<float>& image, int channels, int height, int width,
                               const std::optional<std::vector<int>>& mask, int tile_size,
                               TilePolicy policy, const std::string& image_id, bool* warned) {
    if (tile_size < 16 || tile_size % 16 != 0)
        throw std::invalid_argument("tile: tile_size must be >= 16 and divisible by 16");
    if (image.size() != static_cast<size_t>(channels) * height * width)
        throw std::invalid_argument("tile: image buffer does not match dimensions");
    if (mask && mask->size() != static_cast<size_t>(height) * width)
        throw std::invalid_argument("tile: mask does not match image dimensions");
    if (warned) *warned = false;

    std::vector<LabeledPatch> out;
    int t = tile_size;
    int rows, cols;
    if (policy == TilePolicy::drop) {
        rows = height / t;
        cols = width / t;
        if (rows == 0 || cols == 0) {
            if (warned) *warned = true;
            return out;
        }
    } else {
        rows = (height + t - 1) / t;
        cols = (width + t - 1) / t;
    }

    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            LabeledPatch p;
            p.channels = channels;
            p.height = t;
            p.width = t;
            p.origin = {image_id, r, c};
            p.image.resize(static_cast<size_t>(channels) * t * t);
            if (mask) p.mask = std::vector<int>(static_cast<size_t>(t) * t);
            for (int y = 0; y < t; ++y) {
                int sy = r * t + y;
                if (policy == TilePolicy::reflect_pad) sy = reflect_index(sy, height);
                for (int x = 0; x < t; ++x) {
                    int sx = c * t + x;
                    if (policy == TilePolicy::reflect_pad) sx = reflect_index(sx, width);
                    for (int ch = 0; ch < channels; ++ch)
                        p.image[(static_cast<size_t>(ch) * t + y) * t + x] =
                            image[(static_cast<size_t>(ch) * height + sy) * width + sx];
                    if (mask)
                        (*p.mask)[static_cast<size_t>(y) * t + x] =
                            (*mask)[static_cast<size_t>(sy) * width + sx];
                }
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<float> reassemble(const std::vector<LabeledPatch>& tiles, int channels, int height,
                              int width) {
    std::vector<float> out(static_cast<size_t>(channels) * height * width, 0.0f);
    for (const auto& p : tiles) {
        for (int y = 0; y < p.height; ++y) {
            int dy = p.origin.row * p.height + y;
            if (dy >= height) continue;
            for (int x = 0; x < p.width; ++x) {
                int dx = p.origin.col * p.width + x;
                if (dx >= width) continue;
                for (int ch = 0; ch < channels; ++ch)
                    out[(static_cast<size_t>(ch) * height + dy) * width + dx] =
                        p.image[(static_cast<size_t>(ch) * p.height + y) * p.width + x];
            }
        }
    }
    return out;
}

// ---- statistics ----

std::vector<double> class_distribution(const DomainDataset& ds) {
    int C = ds.schema.num_classes();
    std::vector<uint64_t> counts(static_cast<size_t>(C), 0);
    uint64_t total = 0;
    for (size_t i = 0; i < ds.patches.size(); ++i) {
        const auto& p = ds.patches[i];
        if (!p.mask)
            throw std::invalid_argument("class_distribution: patch " + std::to_string(i) +
                                        " has no labels");
        for (int m : *p.mask) {
            if (m < 0 || m >= C)
                throw std::out_of_range("class_distribution: mask value out of range");
            ++counts[static_cast<size_t>(m)];
            ++total;
        }
    }
    std::vector<double> pct(static_cast<size_t>(C), 0.0);
    if (total == 0) return pct;
    for (int c = 0; c < C; ++c)
        pct[static_cast<size_t>(c)] = 100.0 * static_cast<double>(counts[static_cast<size_t>(c)]) /
                                      static_cast<double>(total);
    return pct;
}

// ---- palette codecs ----

ImageU8 encode_mask(const std::vector<int>& mask, int height, int width,
                    const std::vector<std::array<uint8_t, 3>>& palette) {
    if (mask.size() != static_cast<size_t>(height) * width)
        throw std::invalid_argument("encode_mask: mask size mismatch");
    ImageU8 img;
    img.width = width;
    img.height = height;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(width) * height * 3);
    for (size_t i = 0; i < mask.size(); ++i) {
        int m = mask[i];
        if (m < 0 || m >= static_cast<int>(palette.size()))
            throw std::out_of_range("encode_mask: class index " + std::to_string(m) +
                                    " outside palette");
        img.pixels[i * 3 + 0] = palette[static_cast<size_t>(m)][0];
        img.pixels[i * 3 + 1] = palette[static_cast<size_t>(m)][1];
        img.pixels[i * 3 + 2] = palette[static_cast<size_t>(m)][2];
    }
    return img;
}

std::vector<int> decode_mask(const ImageU8& img,
                             const std::vector<std::array<uint8_t, 3>>& palette) {
    if (img.channels < 3) throw std::invalid_argument("decode_mask: need an RGB image");
    std::map<std::array<uint8_t, 3>, int> lut;
    for (size_t c = 0; c < palette.size(); ++c) lut[palette[c]] = static_cast<int>(c);
    std::vector<int> mask(static_cast<size_t>(img.width) * img.height);
    std::map<std::array<uint8_t, 3>, uint64_t> unknown;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            std::array<uint8_t, 3> rgb = {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
            auto it = lut.find(rgb);
            if (it == lut.end())
                ++unknown[rgb];
            else
                mask[static_cast<size_t>(y) * img.width + x] = it->second;
        }
    }
    if (!unknown.empty()) {
        std::string msg = "decode_mask: colors outside the palette:";
        for (const auto& [rgb, n] : unknown)
            msg += " (" + std::to_string(rgb[0]) + "," + std::to_string(rgb[1]) + "," +
                   std::to_string(rgb[2]) + ")x" + std::to_string(n);
        throw std::invalid_argument(msg);
    }
    return mask;
}

// ---- dataset directory I/O ----

static std::string patch_stem(size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06zu", i);
    return buf;
}

void save_dataset(const DomainDataset& ds, const std::string& dir) {
    if (!ds.patches.empty() && ds.patches[0].channels != 3)
        throw std::invalid_argument("save_dataset: only 3-channel image storage is supported");
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");

    json manifest;
    manifest["format_version"] = 1;
    json schema;
    schema["class_names"] = ds.schema.class_names;
    schema["channels"] = ds.schema.channels;
    schema["resolution_cm"] = ds.schema.resolution_cm;
    schema["palette"] = json::array();
    for (const auto& c : ds.schema.palette) schema["palette"].push_back({c[0], c[1], c[2]});
    manifest["schema"] = schema;
    manifest["patches"] = json::array();

    for (size_t i = 0; i < ds.patches.size(); ++i) {
        const auto& p = ds.patches[i];
        std::string stem = patch_stem(i);
        ImageU8 img;
        img.width = p.width;
        img.height = p.height;
        img.channels = 3;
        img.pixels.resize(static_cast<size_t>(p.width) * p.height * 3);
        for (int y = 0; y < p.height; ++y)
            for (int x = 0; x < p.width; ++x)
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) =
                        norm_to_u8(p.image[(static_cast<size_t>(c) * p.height + y) * p.width + x]);
        std::string img_rel = "images/" + stem + ".png";
        write_png((fs::path(dir) / img_rel).string(), img);

        json rec;
        rec["image"] = img_rel;
        rec["split"] = p.split;
        rec["origin"] = {{"image_id", p.origin.image_id}, {"row", p.origin.row}, {"col", p.origin.col}};
        if (p.mask) {
            std::string mask_rel = "masks/" + stem + ".png";
            write_png((fs::path(dir) / mask_rel).string(),
                      encode_mask(*p.mask, p.height, p.width, ds.schema.palette));
            rec["mask"] = mask_rel;
        } else {
            rec["mask"] = nullptr;
        }
        manifest["patches"].push_back(rec);
    }

    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

DomainDataset load_dataset(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("load_dataset: missing manifest.json in " + dir);
    json manifest = json::parse(in);

    DomainDataset ds;
    const auto& schema = manifest.at("schema");
    ds.schema.class_names = schema.at("class_names").get<std::vector<std::string>>();
    ds.schema.channels = schema.at("channels").get<std::vector<std::string>>();
    ds.schema.resolution_cm = schema.at("resolution_cm").get<double>();
    for (const auto& c : schema.at("palette"))
        ds.schema.palette.push_back({c.at(0).get<uint8_t>(), c.at(1).get<uint8_t>(), c.at(2).get<uint8_t>()});
    ds.schema.validate();

    for (const auto& rec : manifest.at("patches")) {
        LabeledPatch p;
        ImageU8 img = read_png((fs::path(dir) / rec.at("image").get<std::string>()).string());
        p.width = img.width;
        p.height = img.height;
        p.channels = 3;
        p.image.resize(static_cast<size_t>(3) * img.width * img.height);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < 3; ++c)
                    p.image[(static_cast<size_t>(c) * img.height + y) * img.width + x] =
                        u8_to_norm(img.at(y, x, c));
        if (!rec.at("mask").is_null()) {
            ImageU8 m = read_png((fs::path(dir) / rec.at("mask").get<std::string>()).string());
            p.mask = decode_mask(m, ds.schema.palette);
        }
        p.split = rec.at("split").get<std::string>();
        const auto& o = rec.at("origin");
        p.origin = {o.at("image_id").get<std::string>(), o.at("row").get<int>(), o.at("col").get<int>()};
        ds.patches.push_back(std::move(p));
    }
    return ds;
}

uint64_t mask_checksum(const DomainDataset& ds) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](uint64_t v) {
        h ^= v;
        h *= 0x100000001b3ULL;
    };
    for (const auto& p : ds.patches) {
        if (!p.mask) {
            mix(0xffffffffffffffffULL);
            continue;
        }
        for (int m : *p.mask) mix(static_cast<uint64_t>(m) + 1);
    }
    return h;
}

}  // namespace uda
