#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sqa/tensor.hpp"

namespace sqa {

// Binary NetPBM rasters, maxval 255 only. Masks are stored as 0/255 P5, label
// maps as raw {0,1,2} P5, images as P6. Write-then-read round-trips are
// bit-exact; malformed headers fail with the byte offset.

struct PgmImage {
    std::int64_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

struct PpmImage {
    std::int64_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB triplets
};

PgmImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const PgmImage& img);
PpmImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const PpmImage& img);

// tensor [1,H,W] or [H,W] in {0,1} <-> 0/255 bytes
PgmImage mask_to_pgm(const TensorPtr<float>& mask);
TensorPtr<float> pgm_to_mask(const PgmImage& img);

// label tensor [H,W] in {0,1,2} <-> raw byte values
PgmImage labels_to_pgm(const TensorPtr<float>& labels);
TensorPtr<float> pgm_to_labels(const PgmImage& img);

// image tensor [3,H,W] in [0,1] <-> 8-bit RGB
PpmImage image_to_ppm(const TensorPtr<float>& image);
TensorPtr<float> ppm_to_image(const PpmImage& img);

// QA overlay: missed pixels pure green, mistaken pixels pure red, background
// the grayscale of the source image (channel average; mid-gray when null).
PpmImage render_overlay(const std::vector<std::uint8_t>& labels, std::int64_t height,
                        std::int64_t width, const TensorPtr<float>& image);

}  // namespace sqa
