#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "raingen/tensor.hpp"

namespace raingen {

// Planar [c][h][w] image with values in [0,1]. Files are binary PNM
// (P6 for color, P5 for single channel), an 8-bit lossless raster format.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pix;

  Image() = default;
  Image(int h, int w, int c)
      : height(h), width(w), channels(c),
        pix(static_cast<size_t>(h) * w * c, 0.0) {}

  double& at(int c, int y, int x) {
    return pix[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return pix[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

// Raw 8-bit raster as stored on disk.
struct RasterBytes {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 (P5) or 3 (P6)
  std::vector<uint8_t> bytes;  // interleaved row-major
};

RasterBytes read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const RasterBytes& raster);

Image image_from_raster(const RasterBytes& raster);
RasterBytes raster_from_image(const Image& img);

Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& img);

// [3,H,W] tensor <-> image; image must be 3-channel.
ad::Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const ad::Tensor& t);

Image crop(const Image& img, int y0, int x0, int h, int w);
// Edge-replicating pad on the bottom/right up to the given size.
Image pad_to(const Image& img, int h, int w);

}  // namespace raingen
