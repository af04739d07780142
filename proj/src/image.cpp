#include "dproto/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dproto/errors.hpp"

namespace dproto {

namespace {

[[noreturn]] void fail(const std::string& path, std::size_t offset, const std::string& what) {
    throw DataError(path + ": " + what + " (byte " + std::to_string(offset) + ")");
}

struct ByteReader {
    const std::string& path;
    std::vector<char> bytes;
    std::size_t pos = 0;

    explicit ByteReader(const std::string& p) : path(p) {
        std::ifstream in(p, std::ios::binary);
        if (!in)
            throw DataError("cannot open image file: " + p);
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    bool eof() const { return pos >= bytes.size(); }
    char peek() const { return bytes[pos]; }

    // Skips whitespace and '#' comments between header tokens.
    void skip_separators() {
        while (!eof()) {
            char ch = peek();
            if (ch == '#') {
                while (!eof() && peek() != '\n') ++pos;
            } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
                ++pos;
            } else {
                return;
            }
        }
    }

    int read_int(const char* what) {
        skip_separators();
        if (eof())
            fail(path, pos, std::string("unexpected end of file reading ") + what);
        if (peek() < '0' || peek() > '9')
            fail(path, pos, std::string("expected digit for ") + what);
        long v = 0;
        while (!eof() && peek() >= '0' && peek() <= '9') {
            v = v * 10 + (peek() - '0');
            if (v > 1'000'000'000)
                fail(path, pos, std::string("value too large for ") + what);
            ++pos;
        }
        return static_cast<int>(v);
    }
};

}  // namespace

Image Image::zeros(int c, int h, int w) { return filled(c, h, w, 0.0); }

Image Image::filled(int c, int h, int w, double v) {
    Image img;
    img.c = c;
    img.h = h;
    img.w = w;
    img.data.assign(static_cast<std::size_t>(c) * h * w, v);
    return img;
}

Tensor Image::to_tensor(bool requires_grad) const {
    return Tensor::from({c, h, w}, data, requires_grad);
}

Image Image::from_tensor(const Tensor& t) {
    if (t.ndim() != 3)
        throw ShapeError("Image::from_tensor: expected rank-3 tensor, got " + shape_str(t.shape()));
    Image img;
    img.c = t.dim(0);
    img.h = t.dim(1);
    img.w = t.dim(2);
    img.data = t.values();
    return img;
}

Image read_image(const std::string& path) {
    ByteReader r(path);
    if (r.bytes.size() < 2)
        fail(path, 0, "missing magic number");
    char m0 = r.bytes[0];
    char m1 = r.bytes[1];
    int channels;
    if (m0 == 'P' && m1 == '6')
        channels = 3;
    else if (m0 == 'P' && m1 == '5')
        channels = 1;
    else
        fail(path, 0, "unsupported magic number (need P6 or P5)");
    r.pos = 2;

    int w = r.read_int("width");
    int h = r.read_int("height");
    int maxval = r.read_int("maxval");
    if (w <= 0 || h <= 0)
        fail(path, r.pos, "non-positive image dimensions");
    if (maxval != 255)
        fail(path, r.pos, "unsupported maxval " + std::to_string(maxval) + " (need 255)");
    if (r.eof())
        fail(path, r.pos, "unexpected end of file before pixel data");
    char sep = r.peek();
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
        fail(path, r.pos, "expected single whitespace before pixel data");
    ++r.pos;

    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (r.bytes.size() - r.pos < need)
        fail(path, r.bytes.size(),
             "truncated pixel data: expected " + std::to_string(need) + " bytes, got " +
                 std::to_string(r.bytes.size() - r.pos));
    if (r.bytes.size() - r.pos > need)
        fail(path, r.pos + need, "trailing bytes after pixel data");

    Image img = Image::zeros(channels, h, w);
    const unsigned char* px = reinterpret_cast<const unsigned char*>(r.bytes.data()) + r.pos;
    // File order is interleaved row-major; storage is planar CHW.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < channels; ++ch)
                img.at(ch, y, x) =
                    static_cast<double>(px[(static_cast<std::size_t>(y) * w + x) * channels + ch]) / 255.0;
    return img;
}

std::vector<std::uint8_t> quantize_bytes(const Image& img) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(img.c) * img.h * img.w);
    std::size_t k = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                double v = std::clamp(img.at(ch, y, x), 0.0, 1.0);
                out[k++] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    return out;
}

void write_image(const std::string& path, const Image& img) {
    if (img.c != 1 && img.c != 3)
        throw DataError("write_image: unsupported channel count " + std::to_string(img.c));
    if (img.h <= 0 || img.w <= 0 || img.data.size() != static_cast<std::size_t>(img.c) * img.h * img.w)
        throw DataError("write_image: inconsistent image dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write image file: " + path);
    out << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    auto bytes = quantize_bytes(img);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw DataError("short write to image file: " + path);
}

}  // namespace dproto
