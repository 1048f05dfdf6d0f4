#include "laser/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "laser/errors.hpp"

namespace laser {

std::vector<unsigned char> to_rgb8(const Image& image) {
    std::vector<unsigned char> out(image.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
        out[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    return out;
}

Image quantized(const Image& image) {
    Image out(image.width, image.height);
    const auto bytes = to_rgb8(image);
    for (std::size_t i = 0; i < bytes.size(); ++i) out.pixels[i] = bytes[i] / 255.0f;
    return out;
}

Image load_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&png);
        throw IoError("cannot decode PNG " + path.string() + ": " + png.message);
    }
    Image image(static_cast<int>(png.width), static_cast<int>(png.height));
    for (std::size_t i = 0; i < buffer.size(); ++i) image.pixels[i] = buffer[i] / 255.0f;
    return image;
}

void save_png(const Image& image, const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    const auto bytes = to_rgb8(image);
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + png.message);
    }
}

namespace {

constexpr int kRedLevels = 6;
constexpr int kGreenLevels = 7;
constexpr int kBlueLevels = 6;

std::uint8_t palette_index(unsigned char r, unsigned char g, unsigned char b) {
    const int ri = (r * (kRedLevels - 1) + 127) / 255;
    const int gi = (g * (kGreenLevels - 1) + 127) / 255;
    const int bi = (b * (kBlueLevels - 1) + 127) / 255;
    return static_cast<std::uint8_t>(ri * kGreenLevels * kBlueLevels + gi * kBlueLevels + bi);
}

class BitPacker {
public:
    explicit BitPacker(std::vector<std::uint8_t>& out) : out_(out) {}

    void put(unsigned code, int width) {
        acc_ |= static_cast<std::uint32_t>(code) << nbits_;
        nbits_ += width;
        while (nbits_ >= 8) {
            out_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
            acc_ >>= 8;
            nbits_ -= 8;
        }
    }
    void flush() {
        if (nbits_ > 0) out_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
        acc_ = 0;
        nbits_ = 0;
    }

private:
    std::vector<std::uint8_t>& out_;
    std::uint32_t acc_ = 0;
    int nbits_ = 0;
};

void put_u16(std::ofstream& f, int v) {
    f.put(static_cast<char>(v & 0xff));
    f.put(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

void save_gif(std::span<const Image> frames, const std::filesystem::path& path, int fps) {
    if (frames.empty()) throw IoError("cannot write GIF without frames");
    const int w = frames.front().width;
    const int h = frames.front().height;
    for (const auto& f : frames) {
        if (f.width != w || f.height != h) throw ShapeError("GIF frames must share dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string());

    out.write("GIF89a", 6);
    put_u16(out, w);
    put_u16(out, h);
    out.put(static_cast<char>(0xF7));  // global table, 8-bit colour, 256 entries
    out.put(0);
    out.put(0);
    for (int i = 0; i < 256; ++i) {
        int r = 0, g = 0, b = 0;
        if (i < kRedLevels * kGreenLevels * kBlueLevels) {
            r = (i / (kGreenLevels * kBlueLevels)) * 255 / (kRedLevels - 1);
            g = ((i / kBlueLevels) % kGreenLevels) * 255 / (kGreenLevels - 1);
            b = (i % kBlueLevels) * 255 / (kBlueLevels - 1);
        }
        out.put(static_cast<char>(r));
        out.put(static_cast<char>(g));
        out.put(static_cast<char>(b));
    }
    // NETSCAPE2.0 application extension: loop forever
    const unsigned char loop[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P', 'E',
                                  '2',  '.',  '0',  0x03, 0x01, 0x00, 0x00, 0x00};
    out.write(reinterpret_cast<const char*>(loop), sizeof(loop));

    const int delay = std::max(1, 100 / std::max(1, fps));
    for (const auto& frame : frames) {
        out.put(0x21);
        out.put(static_cast<char>(0xF9));
        out.put(0x04);
        out.put(0x00);
        put_u16(out, delay);
        out.put(0x00);
        out.put(0x00);

        out.put(0x2C);
        put_u16(out, 0);
        put_u16(out, 0);
        put_u16(out, w);
        put_u16(out, h);
        out.put(0x00);

        // Literal-only LZW: a clear code every 250 symbols keeps the code width at 9 bits.
        constexpr unsigned kClear = 256;
        constexpr unsigned kEnd = 257;
        out.put(0x08);
        std::vector<std::uint8_t> stream;
        BitPacker bits(stream);
        const auto rgb = to_rgb8(frame);
        int since_clear = 0;
        bits.put(kClear, 9);
        for (std::size_t p = 0; p < rgb.size(); p += 3) {
            if (since_clear == 250) {
                bits.put(kClear, 9);
                since_clear = 0;
            }
            bits.put(palette_index(rgb[p], rgb[p + 1], rgb[p + 2]), 9);
            ++since_clear;
        }
        bits.put(kEnd, 9);
        bits.flush();
        for (std::size_t off = 0; off < stream.size(); off += 255) {
            const std::size_t n = std::min<std::size_t>(255, stream.size() - off);
            out.put(static_cast<char>(n));
            out.write(reinterpret_cast<const char*>(stream.data() + off), static_cast<std::streamsize>(n));
        }
        out.put(0x00);
    }
    out.put(0x3B);
    if (!out) throw IoError("failed writing " + path.string());
}

double pixel_mse(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) {
        throw ShapeError("pixel_mse: image dimensions differ");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        acc += d * d;
    }
    return a.pixels.empty() ? 0.0 : acc / static_cast<double>(a.pixels.size());
}

}  // namespace laser
