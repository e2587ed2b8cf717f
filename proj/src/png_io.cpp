#include "hoidet/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace hoidet {

void write_png(const std::string& path, const Image& img) {
    if (img.h <= 0 || img.w <= 0 || img.hwc.size() != size_t(img.h) * img.w * 3)
        throw std::runtime_error("write_png: malformed image buffer");

    std::vector<png_byte> bytes(img.hwc.size());
    for (size_t i = 0; i < img.hwc.size(); ++i) {
        float v = img.hwc[i];
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        bytes[i] = static_cast<png_byte>(std::lround(v * 255.f));
    }

    png_image out;
    std::memset(&out, 0, sizeof(out));
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(img.w);
    out.height = static_cast<png_uint_32>(img.h);
    out.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&out, path.c_str(), 0, bytes.data(), 0, nullptr))
        throw std::runtime_error("write_png: " + path + ": " + out.message);
}

Image read_png(const std::string& path) {
    png_image in;
    std::memset(&in, 0, sizeof(in));
    in.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&in, path.c_str()))
        throw std::runtime_error("read_png: " + path + ": " + in.message);
    in.format = PNG_FORMAT_RGB;

    std::vector<png_byte> bytes(PNG_IMAGE_SIZE(in));
    if (!png_image_finish_read(&in, nullptr, bytes.data(), 0, nullptr))
        throw std::runtime_error("read_png: " + path + ": " + in.message);

    Image img;
    img.h = static_cast<int>(in.height);
    img.w = static_cast<int>(in.width);
    img.hwc.resize(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) img.hwc[i] = float(bytes[i]) / 255.f;
    return img;
}

}  // namespace hoidet
