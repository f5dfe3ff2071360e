#include "veil/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace veil::img {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<std::uint8_t> to_rgb8(const Tensor& image) {
  if (image.shape.size() != 3 || image.shape[2] != 3)
    throw ShapeError("image write expects (H,W,3)");
  std::vector<std::uint8_t> bytes(image.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(image.data[i]);
  return bytes;
}

Tensor from_rgb8(const std::uint8_t* bytes, int h, int w) {
  Tensor t = Tensor::zeros({h, w, 3});
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = bytes[i] / 255.0;
  return t;
}

struct PngReadCtx {
  const std::uint8_t* data;
  std::size_t len;
  std::size_t pos;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
  auto* ctx = static_cast<PngReadCtx*>(png_get_io_ptr(png));
  if (ctx->pos + n > ctx->len) png_error(png, "png read past end of buffer");
  std::memcpy(out, ctx->data + ctx->pos, n);
  ctx->pos += n;
}

void png_mem_write(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_mem_flush(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Tensor& image) {
  const std::vector<std::uint8_t> rgb = to_rgb8(image);
  const int h = image.shape[0], w = image.shape[1];

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png encode failed");
  }
  png_set_write_fn(png, &out, png_mem_write, png_mem_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * w * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Tensor decode_png(const std::uint8_t* bytes, std::size_t len) {
  if (len < 8 || png_sig_cmp(bytes, 0, 8) != 0) throw IoError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<std::uint8_t> pixels;
  int h = 0, w = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png decode failed");
  }
  PngReadCtx ctx{bytes, len, 0};
  png_set_read_fn(png, &ctx, png_mem_read);
  png_read_info(png, info);

  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  // Normalize everything to 8-bit RGB.
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  pixels.resize(static_cast<std::size_t>(h) * w * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_rgb8(pixels.data(), h, w);
}

void write_png(const std::string& path, const Tensor& image) {
  const std::vector<std::uint8_t> bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path);
}

Tensor read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_png(bytes.data(), bytes.size());
}

void write_ppm(const std::string& path, const Tensor& image) {
  const std::vector<std::uint8_t> rgb = to_rgb8(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out << "P6\n" << image.shape[1] << " " << image.shape[0] << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw IoError("short write: " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError("not a binary PPM (P6): " + path);
  auto next_token = [&in, &path]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw IoError("truncated PPM header: " + path);
  };
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w < 1 || h < 1 || maxval != 255) throw IoError("unsupported PPM header in " + path);
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!in) throw IoError("truncated PPM pixel data: " + path);
  return from_rgb8(rgb.data(), h, w);
}

Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  in.close();
  if (magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
  return read_png(path);
}

void write_image(const std::string& path, const Tensor& image) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm")
    write_ppm(path, image);
  else
    write_png(path, image);
}

Tensor quantize8(const Tensor& image) {
  Tensor out = image;
  for (double& v : out.data) v = to_byte(v) / 255.0;
  return out;
}

void write_f32(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out << "VF32";
  const std::uint32_t rank = static_cast<std::uint32_t>(t.shape.size());
  out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (int d : t.shape) {
    const std::uint32_t dim = static_cast<std::uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  }
  std::vector<float> blob(t.data.size());
  for (std::size_t i = 0; i < blob.size(); ++i) blob[i] = static_cast<float>(t.data[i]);
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!out) throw IoError("short write: " + path);
}

Tensor read_f32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "VF32", 4) != 0) throw IoError("bad f32 sidecar magic: " + path);
  std::uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!in || rank == 0 || rank > 8) throw IoError("bad f32 sidecar rank: " + path);
  std::vector<int> shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t dim = 0;
    in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
    shape[i] = static_cast<int>(dim);
  }
  const std::int64_t n = shape_numel(shape);
  std::vector<float> blob(static_cast<std::size_t>(n));
  in.read(reinterpret_cast<char*>(blob.data()),
          static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!in) throw IoError("truncated f32 sidecar: " + path);
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < blob.size(); ++i) t.data[i] = static_cast<double>(blob[i]);
  return t;
}

}  // namespace veil::img
