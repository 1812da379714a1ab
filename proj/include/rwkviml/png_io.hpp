#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace iml {

struct PngImage {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1 (gray) or 3 (rgb) after load-time normalization
    std::vector<std::uint8_t> data;  // row-major, interleaved

    std::uint8_t at(int y, int x, int c) const {
        return data[static_cast<size_t>((y * width + x) * channels + c)];
    }
};

// palette, 16-bit, and alpha inputs are folded to 8-bit gray or rgb
PngImage read_png(const std::string& path);

// data is row-major interleaved; channels must be 1 or 3
void write_png(const std::string& path, const std::uint8_t* data, int height, int width,
               int channels);

}  // namespace iml
