#include "cigli/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace cigli {

Image Image::filled(int height, int width, std::array<double, 3> rgb) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("Image::filled: non-positive size");
  Image img{height, width, std::vector<double>(static_cast<std::size_t>(height) * width * 3)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = rgb[i % 3];
  return img;
}

bool Image::valid() const {
  if (height <= 0 || width <= 0) return false;
  if (pixels.size() != static_cast<std::size_t>(height) * width * 3) return false;
  return std::all_of(pixels.begin(), pixels.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

namespace {

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

struct ReadCursor {
  std::span<const unsigned char> bytes;
  std::size_t offset = 0;
};

void read_from_span(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + length > cur->bytes.size()) png_error(png, "truncated PNG data");
  std::memcpy(data, cur->bytes.data() + cur->offset, length);
  cur->offset += length;
}

[[noreturn]] void on_png_error(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("png: ") + msg); }
void on_png_warning(png_structp, png_const_charp) {}

}  // namespace

std::vector<unsigned char> encode_png(const Image& img) {
  if (!img.valid()) throw std::invalid_argument("encode_png: invalid image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
  if (!png) throw std::runtime_error("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  std::vector<unsigned char> out;
  std::vector<png_byte> row(static_cast<std::size_t>(img.width) * 3);
  try {
    png_set_write_fn(png, &out, write_to_vector, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
      for (int i = 0; i < img.width * 3; ++i) {
        const double v = img.pixels[static_cast<std::size_t>(y) * img.width * 3 + i];
        row[static_cast<std::size_t>(i)] = static_cast<png_byte>(std::lround(v * 255.0));
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw std::runtime_error("png: not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
  if (!png) throw std::runtime_error("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  Image img;
  try {
    png_set_read_fn(png, &cursor, read_from_span);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_channels(png, info) != 3) throw std::runtime_error("png: unsupported channel layout");
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (int y = 0; y < img.height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int i = 0; i < img.width * 3; ++i)
        img.pixels[static_cast<std::size_t>(y) * img.width * 3 + i] = row[static_cast<std::size_t>(i)] / 255.0;
    }
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

nn::Tensor to_batch(std::span<const Image* const> images) {
  if (images.empty()) throw std::invalid_argument("to_batch: no images");
  const int h = images.front()->height, w = images.front()->width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> values(images.size() * 3 * plane);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.height != h || img.width != w) throw std::invalid_argument("to_batch: images differ in size");
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) values[(b * 3 + c) * plane + p] = img.pixels[p * 3 + c];
  }
  return nn::Tensor::from({static_cast<int>(images.size()), 3, h, w}, std::move(values));
}

nn::Tensor to_batch(std::span<const Image> images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return to_batch(std::span<const Image* const>(ptrs));
}

Image from_batch(const nn::Tensor& batch, int index) {
  if (batch.rank() != 4 || batch.dim(1) != 3) throw std::invalid_argument("from_batch: expected [B,3,H,W]");
  const int h = batch.dim(2), w = batch.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Image img{h, w, std::vector<double>(plane * 3)};
  const std::size_t base = static_cast<std::size_t>(index) * 3 * plane;
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[p * 3 + c] = std::clamp(batch.at(base + c * plane + p), 0.0, 1.0);
  return img;
}

}  // namespace cigli
