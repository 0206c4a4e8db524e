#include "anyir/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace anyir {

namespace {

using File = std::unique_ptr<FILE, int (*)(FILE*)>;

File open_file(const std::filesystem::path& path, const char* mode) {
    File f(std::fopen(path.c_str(), mode), &std::fclose);
    if (!f) throw ImageIoError("cannot open " + path.string());
    return f;
}

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
    File f = open_file(path, "rb");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw ImageIoError(path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw ImageIoError("libpng: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ImageIoError("libpng: cannot create info struct");
    }
    // libpng reports errors by longjmp to the setjmp below; locals it may
    // jump over are declared first.
    std::vector<unsigned char> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 w = 0, h = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("libpng: failed to decode " + path.string());
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != static_cast<std::size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("libpng: unexpected row layout in " + path.string());
    }
    pixels.resize(rowbytes * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out({1, 3, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
    for (png_uint_32 y = 0; y < h; ++y)
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = pixels[(y * w + x) * 3 + c] / 255.0f;
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    const auto& s = image.shape();
    const bool batched = s.size() == 4;
    if (!((batched && s[0] == 1 && s[1] == 3) || (s.size() == 3 && s[0] == 3))) {
        throw ShapeError("write_png: expected [1,3,H,W] or [3,H,W], got " + to_string(s));
    }
    const auto h = static_cast<png_uint_32>(s[s.size() - 2]), w = static_cast<png_uint_32>(s[s.size() - 1]);
    std::vector<unsigned char> pixels(static_cast<std::size_t>(h) * w * 3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) pixels[p * 3 + c] = to_byte(image[static_cast<std::int64_t>(c * plane + p)]);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * 3;

    File f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw ImageIoError("libpng: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ImageIoError("libpng: cannot create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError("libpng: failed to encode " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(f.get()) != 0) throw ImageIoError("write failed for " + path.string());
}

Tensor quantize8(const Tensor& image) {
    Tensor out = image;
    for (auto& v : out.data()) v = to_byte(v) / 255.0f;
    return out;
}

}  // namespace anyir
