#include "uda/image_io.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>

namespace uda {

ImageU8 read_png(const std::string& path) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str()))
        throw std::runtime_error("failed to open PNG '" + path + "': " + pi.message);
    ImageU8 img;
    img.width = static_cast<int>(pi.width);
    img.height = static_cast<int>(pi.height);
    bool has_alpha = (pi.format & PNG_FORMAT_FLAG_ALPHA) != 0;
    img.channels = has_alpha ? 4 : 3;
    pi.format = has_alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    img.pixels.resize(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
        std::string msg = pi.message;
        png_image_free(&pi);
        throw std::runtime_error("failed to read PNG '" + path + "': " + msg);
    }
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 3 && img.channels != 4)
        throw std::runtime_error("write_png: only 3- or 4-channel images supported");
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = img.channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&pi, path.c_str(), 0, img.pixels.data(), 0, nullptr))
        throw std::runtime_error("failed to write PNG '" + path + "': " + pi.message);
}

}  // namespace uda
