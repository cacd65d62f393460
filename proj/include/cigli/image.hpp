#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "cigli/nn/tensor.hpp"

namespace cigli {

// RGB image, row-major HWC, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  static Image filled(int height, int width, std::array<double, 3> rgb);

  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool valid() const;
  bool operator==(const Image&) const = default;
};

std::vector<unsigned char> encode_png(const Image& img);
Image decode_png(std::span<const unsigned char> bytes);
void write_png(const Image& img, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

// Stacks images into a [B,3,H,W] tensor. All images must share a size.
nn::Tensor to_batch(std::span<const Image> images);
nn::Tensor to_batch(std::span<const Image* const> images);
// Extracts image `index` of a [B,3,H,W] tensor, clamping to [0, 1].
Image from_batch(const nn::Tensor& batch, int index);

}  // namespace cigli
