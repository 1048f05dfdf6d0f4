#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace laser {

// Interleaved RGB, row-major, channel values in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

    float& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    bool empty() const { return pixels.empty(); }

    friend bool operator==(const Image&, const Image&) = default;
};

// 8-bit quantization used by every on-disk format.
std::vector<unsigned char> to_rgb8(const Image& image);
// The image as it reads back after an 8-bit save.
Image quantized(const Image& image);

Image load_png(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);

// Animated GIF with a fixed 6x7x6 colour cube palette and the given frame rate.
void save_gif(std::span<const Image> frames, const std::filesystem::path& path, int fps = 8);

double pixel_mse(const Image& a, const Image& b);

}  // namespace laser
