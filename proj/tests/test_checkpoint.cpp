#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "uda/checkpoint.hpp"

using namespace uda;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

Checkpoint sample_ckpt() {
    Checkpoint c;
    c.kind = "segmenter";
    c.config_json = "{\"base_width\":4}";
    c.epoch = 17;
    c.seed = 42;
    c.config_digest = fnv1a(c.config_json);
    c.entries.push_back({"w", {2, 3}, {1.5f, -2.0f, 0.0f, 3.25f, 4.0f, -0.125f}});
    c.entries.push_back({"b", {2}, {0.5f, -0.5f}});
    return c;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves everything") {
    auto c = sample_ckpt();
    auto path = tmp_path("uda_ckpt_rt.bin");
    save_checkpoint(c, path);
    auto back = load_checkpoint(path);
    CHECK(back.format_version == 1);
    CHECK(back.kind == c.kind);
    CHECK(back.config_json == c.config_json);
    CHECK(back.epoch == c.epoch);
    CHECK(back.seed == c.seed);
    CHECK(back.config_digest == c.config_digest);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].name == "w");
    CHECK(back.entries[0].shape == std::vector<int>{2, 3});
    CHECK(back.entries[0].values == c.entries[0].values);
    CHECK(back.find("b") != nullptr);
    CHECK(back.find("nope") == nullptr);
    std::remove(path.c_str());
}

TEST_CASE("saving twice produces identical bytes") {
    auto c = sample_ckpt();
    auto p1 = tmp_path("uda_ckpt_a.bin");
    auto p2 = tmp_path("uda_ckpt_b.bin");
    save_checkpoint(c, p1);
    save_checkpoint(c, p2);
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    CHECK_FALSE(sa.empty());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("distinct errors for missing, corrupt, wrong-version, truncated files") {
    CHECK_THROWS_WITH_AS(load_checkpoint(tmp_path("uda_ckpt_missing.bin")),
                         doctest::Contains("missing file"), std::runtime_error);

    auto bad = tmp_path("uda_ckpt_badmagic.bin");
    {
        std::ofstream os(bad, std::ios::binary);
        os << "NOPE and more bytes";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("not a checkpoint"),
                         std::runtime_error);
    std::remove(bad.c_str());

    auto c = sample_ckpt();
    auto path = tmp_path("uda_ckpt_version.bin");
    save_checkpoint(c, path);
    {
        // bump the version field in place (bytes 4..7, little endian)
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        char v2[4] = {9, 0, 0, 0};
        f.write(v2, 4);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), std::runtime_error);
    std::remove(path.c_str());

    auto trunc = tmp_path("uda_ckpt_trunc.bin");
    save_checkpoint(c, trunc);
    {
        std::ifstream is(trunc, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(is)), {});
        std::ofstream os(trunc, std::ios::binary | std::ios::trunc);
        os.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(trunc), doctest::Contains("truncated"),
                         std::runtime_error);
    std::remove(trunc.c_str());
}
