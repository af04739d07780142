#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dproto/tensor.hpp"

namespace dproto {

// Planar CHW image with values in [0, 1]. c is 3 (color) or 1 (grayscale).
struct Image {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<double> data;

    double& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
    double at(int ch, int y, int x) const { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }

    static Image zeros(int c, int h, int w);
    static Image filled(int c, int h, int w, double v);

    Tensor to_tensor(bool requires_grad = false) const;
    static Image from_tensor(const Tensor& t);
};

// Binary PPM (P6, c == 3) and PGM (P5, c == 1). Writers quantize each value to
// round(clamp(v, 0, 1) * 255); readers divide by 255. Maxval must be 255.
// Malformed input raises DataError naming the file and the byte offset.
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);

std::vector<std::uint8_t> quantize_bytes(const Image& img);

}  // namespace dproto
