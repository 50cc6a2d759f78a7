#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "uda/data.hpp"
#include "uda/tensor.hpp"

using namespace uda;
namespace fs = std::filesystem;

namespace {

std::vector<float> random_image(int channels, int h, int w, Rng& rng) {
    std::vector<float> img(static_cast<size_t>(channels) * h * w);
    // quantize through 8 bits so PNG round trips are exact
    for (auto& v : img) v = u8_to_norm(static_cast<uint8_t>(rng.uniform_int(256)));
    return img;
}

std::string temp_dir(const char* tag) {
    auto d = fs::temp_directory_path() / (std::string("uda_test_") + tag);
    fs::remove_all(d);
    return d.string();
}

}  // namespace

TEST_CASE("normalization round-trips every 8-bit value") {
    for (int v = 0; v < 256; ++v) {
        float n = u8_to_norm(static_cast<uint8_t>(v));
        CHECK(n >= -1.0f);
        CHECK(n <= 1.0f);
        CHECK(norm_to_u8(n) == v);
    }
    CHECK(norm_to_u8(-2.0f) == 0);
    CHECK(norm_to_u8(2.0f) == 255);
}

TEST_CASE("isprs schema is valid with six distinct colors") {
    auto s = isprs_schema();
    CHECK(s.num_classes() == 6);
    CHECK_NOTHROW(s.validate());
    DatasetSchema bad = s;
    bad.palette[1] = bad.palette[0];
    CHECK_THROWS(bad.validate());
}

TEST_CASE("drop tiling yields floor arithmetic: 6000^2 -> 121, 2000^2 -> 9 at t=512") {
    // geometry-only check via tile counts on 1-channel images
    Rng rng(4);
    {
        std::vector<float> img(static_cast<size_t>(6000) * 6000, 0.0f);
        auto tiles = tile(img, 1, 6000, 6000, std::nullopt, 512, TilePolicy::drop, "a");
        CHECK(tiles.size() == 121);
    }
    {
        std::vector<float> img(static_cast<size_t>(2000) * 2000, 0.0f);
        auto tiles = tile(img, 1, 2000, 2000, std::nullopt, 512, TilePolicy::drop, "b");
        CHECK(tiles.size() == 9);
    }
    {
        // 256x256 at t=64 -> 16 tiles
        std::vector<float> img(static_cast<size_t>(256) * 256, 0.0f);
        auto tiles = tile(img, 1, 256, 256, std::nullopt, 64, TilePolicy::drop, "c");
        CHECK(tiles.size() == 16);
    }
}

TEST_CASE("undersized image under drop yields empty list and a warning flag") {
    std::vector<float> img(static_cast<size_t>(3) * 32 * 32, 0.0f);
    bool warned = false;
    auto tiles = tile(img, 3, 32, 32, std::nullopt, 64, TilePolicy::drop, "small", &warned);
    CHECK(tiles.empty());
    CHECK(warned);
}

TEST_CASE("tile rejects invalid tile sizes") {
    std::vector<float> img(static_cast<size_t>(64) * 64, 0.0f);
    CHECK_THROWS(tile(img, 1, 64, 64, std::nullopt, 8, TilePolicy::drop, "x"));
    CHECK_THROWS(tile(img, 1, 64, 64, std::nullopt, 40, TilePolicy::drop, "x"));
}

TEST_CASE("reflect_pad tiling reassembles losslessly") {
    Rng rng(9);
    int H = 100, W = 150, C = 3, t = 64;
    auto img = random_image(C, H, W, rng);
    std::vector<int> mask(static_cast<size_t>(H) * W);
    for (auto& m : mask) m = static_cast<int>(rng.uniform_int(6));
    auto tiles = tile(img, C, H, W, mask, t, TilePolicy::reflect_pad, "img");
    CHECK(tiles.size() == 2 * 3);  // ceil(100/64) * ceil(150/64)
    auto back = reassemble(tiles, C, H, W);
    CHECK(back == img);
    // masks survive tiling on the unpadded region
    for (const auto& p : tiles) {
        REQUIRE(p.mask.has_value());
        for (int y = 0; y < t; ++y)
            for (int x = 0; x < t; ++x) {
                int sy = p.origin.row * t + y, sx = p.origin.col * t + x;
                if (sy < H && sx < W)
                    CHECK((*p.mask)[static_cast<size_t>(y) * t + x] ==
                          mask[static_cast<size_t>(sy) * W + sx]);
            }
    }
}

TEST_CASE("palette encode/decode round trip; unknown colors are reported") {
    auto schema = isprs_schema();
    Rng rng(12);
    std::vector<int> mask(64);
    for (auto& m : mask) m = static_cast<int>(rng.uniform_int(6));
    auto img = encode_mask(mask, 8, 8, schema.palette);
    CHECK(decode_mask(img, schema.palette) == mask);

    img.at(3, 3, 0) = 17;
    img.at(3, 3, 1) = 17;
    img.at(3, 3, 2) = 17;
    try {
        decode_mask(img, schema.palette);
        FAIL("expected an unknown-color error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("(17,17,17)x1") != std::string::npos);
    }
    CHECK_THROWS(encode_mask({0, 9}, 1, 2, schema.palette));
}

TEST_CASE("dataset save/load round trip preserves pixels, masks, splits, origins") {
    Rng rng(33);
    DomainDataset ds;
    ds.schema = isprs_schema();
    for (int i = 0; i < 4; ++i) {
        LabeledPatch p;
        p.channels = 3;
        p.height = p.width = 16;
        p.image = random_image(3, 16, 16, rng);
        if (i != 2) {
            p.mask = std::vector<int>(256);
            for (auto& m : *p.mask) m = static_cast<int>(rng.uniform_int(6));
        }
        p.split = i < 3 ? "train" : "test";
        p.origin = {"img" + std::to_string(i), i, 2 * i};
        ds.patches.push_back(std::move(p));
    }
    auto dir = temp_dir("roundtrip");
    save_dataset(ds, dir);
    auto back = load_dataset(dir);
    REQUIRE(back.patches.size() == ds.patches.size());
    CHECK(back.schema.class_names == ds.schema.class_names);
    for (size_t i = 0; i < ds.patches.size(); ++i) {
        CHECK(back.patches[i].image == ds.patches[i].image);
        CHECK(back.patches[i].mask == ds.patches[i].mask);
        CHECK(back.patches[i].split == ds.patches[i].split);
        CHECK(back.patches[i].origin.image_id == ds.patches[i].origin.image_id);
        CHECK(back.patches[i].origin.row == ds.patches[i].origin.row);
        CHECK(back.patches[i].origin.col == ds.patches[i].origin.col);
    }
    CHECK(mask_checksum(back) == mask_checksum(ds));
    fs::remove_all(dir);
}

TEST_CASE("mask_checksum is order- and content-sensitive") {
    DomainDataset a;
    a.schema = isprs_schema();
    LabeledPatch p;
    p.channels = 3;
    p.height = p.width = 4;
    p.image.assign(48, 0.0f);
    p.mask = std::vector<int>(16, 1);
    a.patches.push_back(p);
    DomainDataset b = a;
    (*b.patches[0].mask)[5] = 2;
    CHECK(mask_checksum(a) != mask_checksum(b));
    DomainDataset c = a;
    c.patches[0].mask.reset();
    CHECK(mask_checksum(a) != mask_checksum(c));
}

TEST_CASE("class_distribution sums to 100 and rejects unlabeled patches") {
    DomainDataset ds;
    ds.schema = isprs_schema();
    LabeledPatch p;
    p.channels = 3;
    p.height = p.width = 4;
    p.image.assign(48, 0.0f);
    p.mask = std::vector<int>{0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 3, 3};
    ds.patches.push_back(p);
    auto d = class_distribution(ds);
    CHECK(d[0] == doctest::Approx(12.5));
    CHECK(d[1] == doctest::Approx(25.0));
    CHECK(d[2] == doctest::Approx(50.0));
    double sum = 0;
    for (double v : d) sum += v;
    CHECK(sum == doctest::Approx(100.0));
    ds.patches[0].mask.reset();
    CHECK_THROWS(class_distribution(ds));
}

TEST_CASE("png io round trip") {
    Rng rng(7);
    ImageU8 img;
    img.width = 9;
    img.height = 5;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(9) * 5 * 3);
    for (auto& v : img.pixels) v = static_cast<uint8_t>(rng.uniform_int(256));
    auto path = (fs::temp_directory_path() / "uda_test_io.png").string();
    write_png(path, img);
    auto back = read_png(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.channels == img.channels);
    CHECK(back.pixels == img.pixels);
    std::remove(path.c_str());
    CHECK_THROWS(read_png("/nonexistent/of/course.png"));
}
