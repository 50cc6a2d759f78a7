#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uda {

// 8-bit interleaved raster, row-major
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;  // 3 (RGB) or 4 (RGBA)
    std::vector<uint8_t> pixels;

    uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

}  // namespace uda
