#include "emobooth/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "emobooth/common.hpp"

namespace emobooth {

namespace {
void require_same_shape(const Image& a, const Image& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ValidationError(std::string(op) + ": shape mismatch (" + std::to_string(a.height) + "x" +
                              std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                              std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                              std::to_string(b.channels) + ")");
    }
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
}  // namespace

Image operator+(const Image& a, const Image& b) {
    require_same_shape(a, b, "image add");
    Image out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Image operator-(const Image& a, const Image& b) {
    require_same_shape(a, b, "image sub");
    Image out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

Image operator*(double s, const Image& a) {
    Image out = a;
    for (auto& v : out.data) v *= s;
    return out;
}

double sum_squares(const Image& a) {
    double acc = 0.0;
    for (double v : a.data) acc += v * v;
    return acc;
}

double mse(const Image& a, const Image& b) {
    require_same_shape(a, b, "mse");
    if (a.data.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

Image clamp01(Image img) {
    for (auto& v : img.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return img;
}

Image read_png(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ValidationError("cannot open image file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw PipelineError("libpng: failed to create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw PipelineError("libpng: failed to create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError("not a valid PNG file: " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    png_byte color_type = png_get_color_type(png, info);
    png_byte bit_depth = png_get_bit_depth(png, info);

    // Normalize everything to 8-bit RGB.
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<png_byte> row(png_get_rowbytes(png, info));
    Image img(static_cast<int>(h), static_cast<int>(w), 3);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(static_cast<int>(y), static_cast<int>(x), c) = row[x * 3 + c] / 255.0;
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const Image& img) {
    if (img.channels != 3) throw ValidationError("write_png: expected 3-channel image");
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw PipelineError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw PipelineError("libpng: failed to create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw PipelineError("libpng: failed to create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw PipelineError("libpng: write failed for " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = img.at(y, x, c);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                row[static_cast<std::size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::uint64_t image_hash(const Image& img) {
    std::uint64_t h = kFnvOffset;
    h = fnv1a64_bytes(&img.height, sizeof(img.height), h);
    h = fnv1a64_bytes(&img.width, sizeof(img.width), h);
    h = fnv1a64_bytes(&img.channels, sizeof(img.channels), h);
    if (!img.data.empty()) h = fnv1a64_bytes(img.data.data(), img.data.size() * sizeof(double), h);
    return h;
}

}  // namespace emobooth
