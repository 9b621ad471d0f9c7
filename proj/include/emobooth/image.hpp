#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace emobooth {

// Dense float image, row-major [h][w][c], value convention [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, 0.0) {}

    double& at(int h, int w, int c) { return data[(static_cast<std::size_t>(h) * width + w) * channels + c]; }
    double at(int h, int w, int c) const { return data[(static_cast<std::size_t>(h) * width + w) * channels + c]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

Image operator+(const Image& a, const Image& b);
Image operator-(const Image& a, const Image& b);
Image operator*(double s, const Image& a);

double sum_squares(const Image& a);
double mse(const Image& a, const Image& b);
Image clamp01(Image img);

// 8-bit RGB PNG I/O. Reading converts to [0,1]; grayscale/alpha inputs are
// expanded/stripped to 3 channels. Writing clamps and rounds to 8-bit.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

std::uint64_t image_hash(const Image& img);

}  // namespace emobooth
