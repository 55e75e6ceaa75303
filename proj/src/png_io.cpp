#include "rstt/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace rstt {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw config_error("cannot open image '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw config_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw config_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw config_error("failed to decode PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);           // palette/gray -> 8-bit
  png_set_strip_16(png);         // 16-bit -> 8-bit
  png_set_strip_alpha(png);      // drop alpha
  png_set_gray_to_rgb(png);      // gray -> RGB
  png_read_update_info(png, info);

  ImageU8 img;
  img.height = static_cast<Index>(png_get_image_height(png, info));
  img.width = static_cast<Index>(png_get_image_width(png, info));
  img.channels = 3;
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw config_error("'" + path + "' did not decode to 8-bit RGB");
  }
  img.pixels.resize(static_cast<std::size_t>(img.height * img.width * 3));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (Index y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = img.pixels.data() + y * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const ImageU8& img) {
  check_dims(img.channels == 1 || img.channels == 3, "write_png: channels must be 1 or 3");
  check_dims(static_cast<Index>(img.pixels.size()) == img.height * img.width * img.channels,
             "write_png: pixel buffer size mismatch");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw config_error("cannot write image '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw config_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw config_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw config_error("failed to encode PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (Index y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensorf image_to_tensor(const ImageU8& img) {
  check_dims(img.channels == 3, "image_to_tensor: expected RGB");
  Tensorf t({3, img.height, img.width});
  const Index hw = img.height * img.width;
  for (Index i = 0; i < hw; ++i)
    for (Index c = 0; c < 3; ++c)
      t[c * hw + i] = static_cast<float>(img.pixels[static_cast<std::size_t>(i * 3 + c)]) / 255.0f;
  return t;
}

ImageU8 tensor_to_image(const Tensorf& frame) {
  check_dims(frame.rank() == 3 && frame.dim(0) == 3,
             "tensor_to_image: expected [3,H,W], got " + shape_str(frame.shape()));
  ImageU8 img;
  img.height = frame.dim(1);
  img.width = frame.dim(2);
  img.channels = 3;
  const Index hw = img.height * img.width;
  img.pixels.resize(static_cast<std::size_t>(hw * 3));
  for (Index i = 0; i < hw; ++i)
    for (Index c = 0; c < 3; ++c)
      img.pixels[static_cast<std::size_t>(i * 3 + c)] = quantize_u8(frame[c * hw + i]);
  return img;
}

}  // namespace rstt
