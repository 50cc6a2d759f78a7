#include <algorithm>
#include <cmath>

#include "uda/data.hpp"
#include "uda/tensor.hpp"

namespace uda {

namespace {

struct Canvas {
    int t;
    std::vector<double> rgb;  // 3 * t * t, values in [0,1]
    std::vector<int> mask;

    explicit Canvas(int tile) : t(tile), rgb(static_cast<size_t>(3) * tile * tile, 0.0),
                                mask(static_cast<size_t>(tile) * tile, 0) {}

    void paint(int y, int x, int cls, const double* col) {
        if (y < 0 || y >= t || x < 0 || x >= t) return;
        size_t pix = static_cast<size_t>(y) * t + x;
        if (mask[pix] != 0) return;  // objects claim background pixels only
        mask[pix] = cls;
        for (int c = 0; c < 3; ++c) rgb[static_cast<size_t>(c) * t * t + pix] = col[c];
    }
};

// base colors per ISPRS class index, [0,1] RGB
const double kClassColor[6][3] = {
    {0.50, 0.50, 0.52},  // impervious surfaces
    {0.72, 0.42, 0.36},  // building
    {0.45, 0.78, 0.40},  // low vegetation
    {0.12, 0.45, 0.20},  // tree
    {0.86, 0.88, 0.95},  // car
    {0.78, 0.25, 0.70},  // clutter
};

void jitter_color(double* col, const double* base, Rng& rng) {
    for (int c = 0; c < 3; ++c)
        col[c] = std::clamp(base[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
}

uint64_t count_class(const Canvas& cv, int cls) {
    uint64_t n = 0;
    for (int m : cv.mask)
        if (m == cls) ++n;
    return n;
}

void paint_rect(Canvas& cv, int cls, int cy, int cx, int h, int w, const double* col) {
    for (int y = cy; y < cy + h; ++y)
        for (int x = cx; x < cx + w; ++x) cv.paint(y, x, cls, col);
}

void paint_disk(Canvas& cv, int cls, int cy, int cx, int r, const double* col) {
    for (int y = cy - r; y <= cy + r; ++y)
        for (int x = cx - r; x <= cx + r; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) cv.paint(y, x, cls, col);
}

// irregular blob: union of a few disks around a center
void paint_blob(Canvas& cv, int cls, int cy, int cx, int r, const double* col, Rng& rng) {
    int lobes = 3 + static_cast<int>(rng.uniform_int(4));
    for (int l = 0; l < lobes; ++l) {
        int dy = static_cast<int>(rng.uniform(-r * 0.8, r * 0.8));
        int dx = static_cast<int>(rng.uniform(-r * 0.8, r * 0.8));
        int rr = std::max(1, static_cast<int>(rng.uniform(r * 0.4, r * 0.9)));
        paint_disk(cv, cls, cy + dy, cx + dx, rr, col);
    }
}

// striped elongated patch; the alternate low-vegetation look used by the
// class-representation shift (agricultural rows)
void paint_striped_field(Canvas& cv, int cls, int cy, int cx, int h, int w, const double* col,
                         Rng& rng) {
    double dark[3];
    for (int c = 0; c < 3; ++c) dark[c] = std::clamp(col[c] * 0.75, 0.0, 1.0);
    (void)rng;
    for (int y = cy; y < cy + h; ++y)
        for (int x = cx; x < cx + w; ++x) cv.paint(y, x, cls, (y % 4 < 2) ? col : dark);
}

// add one object of class cls; area softly capped at the remaining budget
void add_object(Canvas& cv, int cls, uint64_t remaining, bool alt_repr, Rng& rng) {
    int t = cv.t;
    double col[3];
    jitter_color(col, kClassColor[cls], rng);
    int cy = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(t)));
    int cx = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(t)));
    double budget = static_cast<double>(remaining) * 1.2 + 4.0;
    switch (cls) {
        case 1: {  // building: rectangle
            int hmax = std::clamp(static_cast<int>(std::sqrt(budget)), 3, t / 2);
            int h = 3 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hmax)));
            int w = 3 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hmax)));
            if (alt_repr) w = std::max(3, w / 2);
            paint_rect(cv, cls, cy, cx, h, w, col);
            break;
        }
        case 2: {  // low vegetation: blob, or striped field under the shift
            if (alt_repr) {
                int w = std::clamp(static_cast<int>(std::sqrt(budget) * 2.0), 4, t);
                int h = std::max(3, w / 3);
                paint_striped_field(cv, cls, cy, cx, h, w, col, rng);
            } else {
                int r = std::clamp(static_cast<int>(std::sqrt(budget / 3.14)), 2, t / 4);
                paint_blob(cv, cls, cy, cx, r, col, rng);
            }
            break;
        }
        case 3: {  // tree: disk
            int rmax = std::clamp(static_cast<int>(std::sqrt(budget / 3.14)), 2, 8);
            int r = 2 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(std::max(1, rmax - 1))));
            paint_disk(cv, cls, cy, cx, r, col);
            break;
        }
        case 4: {  // car: small rectangle, either orientation
            bool vert = rng.uniform() < 0.5;
            paint_rect(cv, cls, cy, cx, vert ? 6 : 3, vert ? 3 : 6, col);
            break;
        }
        default: {  // clutter: speckle patch
            int stamps = 4 + static_cast<int>(rng.uniform_int(8));
            if (alt_repr) stamps *= 2;
            int yy = cy, xx = cx;
            for (int s = 0; s < stamps; ++s) {
                paint_disk(cv, cls, yy, xx, 1, col);
                yy += static_cast<int>(rng.uniform(-3, 3));
                xx += static_cast<int>(rng.uniform(-3, 3));
            }
            break;
        }
    }
}

void render_tile(Canvas& cv, const SynthConfig& cfg, bool alt_repr, Rng& rng) {
    int t = cv.t;
    uint64_t tile_px = static_cast<uint64_t>(t) * t;
    // non-background classes claim pixels until their share target is met
    for (int cls = 1; cls < cfg.num_classes; ++cls) {
        double pct = cls < static_cast<int>(cfg.class_percent_targets.size())
                         ? cfg.class_percent_targets[static_cast<size_t>(cls)]
                         : 5.0;
        uint64_t target = static_cast<uint64_t>(pct / 100.0 * static_cast<double>(tile_px));
        bool alt = alt_repr && (cls == 2 || cls == 5);
        for (int attempt = 0; attempt < 200; ++attempt) {
            uint64_t have = count_class(cv, cls);
            if (have + target / 20 >= target) break;
            add_object(cv, cls, target - have, alt, rng);
        }
    }
    // background texture
    size_t plane = static_cast<size_t>(t) * t;
    for (size_t pix = 0; pix < plane; ++pix) {
        if (cv.mask[pix] != 0) continue;
        for (int c = 0; c < 3; ++c) cv.rgb[static_cast<size_t>(c) * plane + pix] = kClassColor[0][c];
    }
    // per-pixel sensor noise on everything
    for (size_t i = 0; i < cv.rgb.size(); ++i)
        cv.rgb[i] = std::clamp(cv.rgb[i] + rng.uniform(-0.04, 0.04), 0.0, 1.0);
}

// bilinear sample of channel plane src (n x n) at real coords
double bilinear(const std::vector<double>& src, int n, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(n - 1));
    x = std::clamp(x, 0.0, static_cast<double>(n - 1));
    int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
    int y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
    double fy = y - y0, fx = x - x0;
    double a = src[static_cast<size_t>(y0) * n + x0] * (1 - fx) + src[static_cast<size_t>(y0) * n + x1] * fx;
    double b = src[static_cast<size_t>(y1) * n + x0] * (1 - fx) + src[static_cast<size_t>(y1) * n + x1] * fx;
    return a * (1 - fy) + b * fy;
}

void apply_resolution_shift(Canvas& cv, double factor) {
    int t = cv.t;
    int small = std::max(4, static_cast<int>(std::lround(t * factor)));
    size_t plane = static_cast<size_t>(t) * t;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> ch(cv.rgb.begin() + static_cast<long>(c) * plane,
                               cv.rgb.begin() + static_cast<long>(c + 1) * plane);
        // 3x3 box blur approximating the coarser sensor footprint
        std::vector<double> blur(plane);
        for (int y = 0; y < t; ++y)
            for (int x = 0; x < t; ++x) {
                double acc = 0.0;
                int n = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= t || xx < 0 || xx >= t) continue;
                        acc += ch[static_cast<size_t>(yy) * t + xx];
                        ++n;
                    }
                blur[static_cast<size_t>(y) * t + x] = acc / n;
            }
        std::vector<double> down(static_cast<size_t>(small) * small);
        double s1 = static_cast<double>(t - 1) / (small - 1);
        for (int y = 0; y < small; ++y)
            for (int x = 0; x < small; ++x)
                down[static_cast<size_t>(y) * small + x] = bilinear(blur, t, y * s1, x * s1);
        double s2 = static_cast<double>(small - 1) / (t - 1);
        for (int y = 0; y < t; ++y)
            for (int x = 0; x < t; ++x)
                cv.rgb[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * t + x] =
                    bilinear(down, small, y * s2, x * s2);
    }
}

void apply_sensor_shift(Canvas& cv, const SynthConfig& cfg) {
    size_t plane = static_cast<size_t>(cv.t) * cv.t;
    for (size_t pix = 0; pix < plane; ++pix) {
        double in[3];
        for (int c = 0; c < 3; ++c) in[c] = cv.rgb[static_cast<size_t>(c) * plane + pix];
        for (int c = 0; c < 3; ++c) {
            double v = cfg.channel_gain[static_cast<size_t>(c)] *
                           in[cfg.channel_permutation[static_cast<size_t>(c)]] +
                       cfg.channel_bias[static_cast<size_t>(c)];
            cv.rgb[static_cast<size_t>(c) * plane + pix] = std::clamp(v, 0.0, 1.0);
        }
    }
}

LabeledPatch canvas_to_patch(const Canvas& cv, const std::string& image_id, int index,
                             const std::string& split) {
    LabeledPatch p;
    p.channels = 3;
    p.height = cv.t;
    p.width = cv.t;
    p.origin = {image_id, index, 0};
    p.split = split;
    size_t plane = static_cast<size_t>(cv.t) * cv.t;
    p.image.resize(3 * plane);
    for (size_t i = 0; i < 3 * plane; ++i) {
        // quantize through 8-bit so save/load round-trips exactly
        uint8_t q = static_cast<uint8_t>(std::lround(cv.rgb[i] * 255.0));
        p.image[i] = u8_to_norm(q);
    }
    p.mask = cv.mask;
    return p;
}

uint64_t tile_seed(uint64_t seed, uint64_t domain, uint64_t index) {
    // splitmix-style mixing of (seed, domain, index)
    uint64_t z = seed ^ (domain * 0x9e3779b97f4a7c15ULL) ^ (index * 0xbf58476d1ce4e5b9ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

SynthResult synth_generate(const SynthConfig& cfg, uint64_t seed) {
    if (cfg.tile_size < 16 || cfg.tile_size % 16 != 0)
        throw ParamError("synth_generate: tile_size must be >= 16 and divisible by 16");
    if (cfg.num_classes < 2 || cfg.num_classes > 6)
        throw ParamError("synth_generate: num_classes must be in [2, 6]");
    if (cfg.source_train < 1 || cfg.target_train < 1)
        throw ParamError("synth_generate: need at least one training patch per domain");
    for (int p : cfg.channel_permutation)
        if (p < 0 || p > 2) throw ParamError("synth_generate: bad channel permutation");

    DatasetSchema schema = isprs_schema();
    schema.class_names.resize(static_cast<size_t>(cfg.num_classes));
    schema.palette.resize(static_cast<size_t>(cfg.num_classes));

    SynthResult res;
    res.source.schema = schema;
    res.target.schema = schema;
    res.target.schema.resolution_cm = cfg.resolution_shift ? 9.0 : 5.0;
    if (cfg.sensor_shift) res.target.schema.channels = {"IR", "R", "G"};

    auto make_domain = [&](DomainDataset& ds, uint64_t domain_tag, int n_train, int n_test,
                           bool shifted) {
        int total = n_train + n_test;
        for (int i = 0; i < total; ++i) {
            Rng rng(tile_seed(seed, domain_tag, static_cast<uint64_t>(i)));
            Canvas cv(cfg.tile_size);
            render_tile(cv, cfg, shifted && cfg.class_representation_shift, rng);
            if (shifted && cfg.resolution_shift) apply_resolution_shift(cv, cfg.resolution_factor);
            if (shifted && cfg.sensor_shift) apply_sensor_shift(cv, cfg);
            std::string id = (domain_tag == 1 ? "source" : "target");
            ds.patches.push_back(canvas_to_patch(cv, id, i, i < n_train ? "train" : "test"));
        }
    };
    make_domain(res.source, 1, cfg.source_train, cfg.source_test, false);
    make_domain(res.target, 2, cfg.target_train, cfg.target_eval, true);
    return res;
}

}  // namespace uda
