#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "idf/io.hpp"

namespace idf {
namespace {

bool g_sandbox = false;
std::filesystem::path g_sandbox_root;

struct FileCloser {
    FILE* f = nullptr;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace

void check_sandbox_path(const std::string& path) {
    if (!g_sandbox) return;
    std::error_code ec;
    const auto resolved = std::filesystem::weakly_canonical(std::filesystem::absolute(path), ec);
    if (ec) throw IoError("cannot resolve path: " + path);
    auto rel = std::filesystem::relative(resolved, g_sandbox_root, ec);
    if (ec || rel.empty() || rel.native().starts_with("..")) {
        throw IoError("path escapes the working tree (sandbox enabled): " + path);
    }
}

void set_sandbox(bool enabled) {
    g_sandbox = enabled;
    if (enabled) g_sandbox_root = std::filesystem::weakly_canonical(std::filesystem::current_path());
}

bool sandbox_enabled() { return g_sandbox; }

Image load_image(const std::string& path) {
    check_sandbox_path(path);
    FileCloser fc;
    fc.f = std::fopen(path.c_str(), "rb");
    if (!fc.f) throw IoError("cannot open image: " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fc.f) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw IoError("not a PNG file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG decode error: " + path);
    }
    png_init_io(png, fc.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));

    if (bit_depth != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG bit depth (want 8): " + std::to_string(bit_depth));
    }
    int channels = 0;
    if (color_type == PNG_COLOR_TYPE_GRAY) {
        channels = 1;
    } else if (color_type == PNG_COLOR_TYPE_RGB) {
        channels = 3;
    } else {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG color type (want 8-bit gray or RGB)");
    }

    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    const size_t stride = static_cast<size_t>(width) * channels;
    pixels.resize(stride * height);
    rows.resize(static_cast<size_t>(height));
    for (int r = 0; r < height; ++r) rows[static_cast<size_t>(r)] = pixels.data() + stride * r;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(channels, height, width);
    for (int ch = 0; ch < channels; ++ch) {
        double* dst = img.values.data() + static_cast<size_t>(ch) * height * width;
        for (int r = 0; r < height; ++r) {
            const png_byte* srow = pixels.data() + stride * r;
            for (int c = 0; c < width; ++c) {
                dst[static_cast<size_t>(r) * width + c] = srow[c * channels + ch] / 255.0;
            }
        }
    }
    return img;
}

void save_image(const Image& img, const std::string& path) {
    check_sandbox_path(path);
    if (img.channels != 1 && img.channels != 3) {
        throw ValidationError("save_image: channels must be 1 or 3");
    }
    FileCloser fc;
    fc.f = std::fopen(path.c_str(), "wb");
    if (!fc.f) throw IoError("cannot create image: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encode error: " + path);
    }
    png_init_io(png, fc.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    std::vector<png_byte> row(stride);
    const size_t hw = img.pixel_count();
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            for (int ch = 0; ch < img.channels; ++ch) {
                const double v = img.values.data()[static_cast<size_t>(ch) * hw +
                                                   static_cast<size_t>(r) * img.width + c];
                row[static_cast<size_t>(c) * img.channels + ch] =
                    static_cast<png_byte>(std::lround(clamp01(v) * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace idf
