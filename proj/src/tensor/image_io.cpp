#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "ctxattr/errors.hpp"
#include "ctxattr/tensor.hpp"

namespace ctxattr {

namespace {

// Interleaved 8-bit RGB as decoded from disk.
struct Rgb8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

Rgb8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError(name + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Rgb8 out;
  out.height = static_cast<int>(image.height);
  out.width = static_cast<int>(image.width);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError(name + ": " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Only trivially destructible locals live across setjmp; the output buffer is
// allocated by the caller.
bool decode_jpeg_into(const std::vector<std::uint8_t>& bytes, Rgb8& out, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.height = static_cast<int>(cinfo.output_height);
  out.width = static_cast<int>(cinfo.output_width);
  out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

Rgb8 decode_any(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) {
    return decode_png(bytes, path.string());
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    Rgb8 out;
    char message[JMSG_LENGTH_MAX] = {};
    if (!decode_jpeg_into(bytes, out, message)) {
      throw DecodeError(path.string() + ": " + message);
    }
    return out;
  }
  throw DecodeError(path.string() + ": unsupported or corrupt image format");
}

void encode_png(const std::filesystem::path& path, int height, int width, png_uint_32 format,
                const std::vector<std::uint8_t>& pixels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
  std::vector<std::uint8_t> buffer(size);
  if (!png_image_write_to_memory(&image, buffer.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint8_t quantize(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path) {
  Rgb8 raw = decode_any(path);
  ImageTensor img(raw.height, raw.width);
  const std::size_t n = img.pixel_count();
  for (int c = 0; c < 3; ++c) {
    auto plane = img.plane(c);
    for (std::size_t i = 0; i < n; ++i) plane[i] = raw.pixels[i * 3 + c] / 255.0f;
  }
  return img;
}

void save_image(const ImageTensor& img, const std::filesystem::path& path) {
  const std::size_t n = img.pixel_count();
  std::vector<std::uint8_t> pixels(n * 3);
  for (int c = 0; c < 3; ++c) {
    auto plane = img.plane(c);
    for (std::size_t i = 0; i < n; ++i) pixels[i * 3 + c] = quantize(plane[i]);
  }
  encode_png(path, img.height(), img.width(), PNG_FORMAT_RGB, pixels);
}

BinaryMask load_mask(const std::filesystem::path& path, double threshold) {
  Rgb8 raw = decode_any(path);
  const std::size_t n = static_cast<std::size_t>(raw.height) * raw.width;
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = &raw.pixels[i * 3];
    // Integer Rec.601 weights keep gray inputs exact.
    double luma = (299.0 * p[0] + 587.0 * p[1] + 114.0 * p[2]) / 1000.0;
    bits[i] = luma / 255.0 > threshold ? 1 : 0;
  }
  return BinaryMask(raw.height, raw.width, std::move(bits));
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> pixels(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) pixels[i] = mask.object(i) ? 255 : 0;
  encode_png(path, mask.height(), mask.width(), PNG_FORMAT_GRAY, pixels);
}

}  // namespace ctxattr
