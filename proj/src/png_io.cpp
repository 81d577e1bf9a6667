#include "nflba/png_io.hpp"

#include <png.h>

#include <cstring>
#include <vector>

namespace nflba {

namespace {

void throw_png_error(const std::string& verb, const std::string& path, const png_image& im) {
    throw IoError(verb + " " + path + ": " + im.message);
}

}  // namespace

void write_png_rgb8(const std::string& path, const Image3& image) {
    if (image.empty()) throw InvalidArgumentError("write_png_rgb8: empty image");

    std::vector<png_byte> buf(image.size() * 3);
    for (size_t i = 0; i < image.size(); ++i) {
        const Vec3& c = image.at_index(i);
        for (int k = 0; k < 3; ++k)
            buf[i * 3 + k] = static_cast<png_byte>(std::lround(clamp01(c[k]) * 255.0));
    }

    png_image im;
    std::memset(&im, 0, sizeof(im));
    im.version = PNG_IMAGE_VERSION;
    im.width = static_cast<png_uint_32>(image.width());
    im.height = static_cast<png_uint_32>(image.height());
    im.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
        throw_png_error("write_png_rgb8", path, im);
}

Image3 read_png_rgb8(const std::string& path) {
    png_image im;
    std::memset(&im, 0, sizeof(im));
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&im, path.c_str()))
        throw_png_error("read_png_rgb8", path, im);

    im.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(im));
    if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr))
        throw_png_error("read_png_rgb8", path, im);

    Image3 out(static_cast<int>(im.width), static_cast<int>(im.height));
    for (size_t i = 0; i < out.size(); ++i)
        out.at_index(i) = Vec3(buf[i * 3 + 0], buf[i * 3 + 1], buf[i * 3 + 2]) / 255.0;
    return out;
}

void write_png_gray16(const std::string& path, const Image1& values, double scale) {
    if (values.empty()) throw InvalidArgumentError("write_png_gray16: empty image");
    if (!(scale > 0.0)) throw InvalidArgumentError("write_png_gray16: scale must be positive");

    std::vector<png_uint_16> buf(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        const double q = std::round(values.at_index(i) / scale);
        buf[i] = static_cast<png_uint_16>(std::min(65535.0, std::max(0.0, q)));
    }

    png_image im;
    std::memset(&im, 0, sizeof(im));
    im.version = PNG_IMAGE_VERSION;
    im.width = static_cast<png_uint_32>(values.width());
    im.height = static_cast<png_uint_32>(values.height());
    im.format = PNG_FORMAT_LINEAR_Y;
    if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
        throw_png_error("write_png_gray16", path, im);
}

Image1 read_png_gray16(const std::string& path, double scale) {
    if (!(scale > 0.0)) throw InvalidArgumentError("read_png_gray16: scale must be positive");

    png_image im;
    std::memset(&im, 0, sizeof(im));
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&im, path.c_str()))
        throw_png_error("read_png_gray16", path, im);

    im.format = PNG_FORMAT_LINEAR_Y;
    std::vector<png_uint_16> buf(PNG_IMAGE_SIZE(im) / sizeof(png_uint_16));
    if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr))
        throw_png_error("read_png_gray16", path, im);

    Image1 out(static_cast<int>(im.width), static_cast<int>(im.height));
    for (size_t i = 0; i < out.size(); ++i) out.at_index(i) = buf[i] * scale;
    return out;
}

}  // namespace nflba
