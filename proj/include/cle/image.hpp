#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cle/tensor.hpp"

namespace cle {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

    std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

// Binary PGM (P5, maxval <= 255). Writing emits "P5 <w> <h> 255\n".
std::vector<std::uint8_t> pgm_encode(const GrayImage& image);
GrayImage pgm_decode(const std::vector<std::uint8_t>& bytes);
void pgm_write(const std::filesystem::path& path, const GrayImage& image);
GrayImage pgm_read(const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centers, rounded and clamped to [0,255].
GrayImage resize_bilinear(const GrayImage& image, std::size_t target_w, std::size_t target_h);

/// Mean of pixel/255 over all pixels of all images, summed in index order.
double mean_pixel(const std::vector<const GrayImage*>& images);

/// [1,H,W] tensor of pixel/255 - mean. The mean is the training-set value
/// stored with the checkpoint; a missing mean is a ConfigError.
Tensor normalize_for_net(const GrayImage& image, std::optional<double> mean);

/// Writes normalize_for_net(image, mean) into dst (H*W floats).
void normalize_into(const GrayImage& image, double mean, float* dst);

} // namespace cle
