#include <png.h>

#include <cstring>
#include <stdexcept>

#include "toolrl/common.hpp"
#include "toolrl/imaging.hpp"

namespace toolrl::imaging {

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) throw std::invalid_argument("encode_png: empty image");
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width());
  desc.height = static_cast<png_uint_32>(img.height());
  desc.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, img.pixels().data(), 0, nullptr)) {
    throw std::runtime_error(std::string("encode_png: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, img.pixels().data(), 0, nullptr)) {
    throw std::runtime_error(std::string("encode_png: ") + desc.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  if (bytes.empty() || !png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw std::invalid_argument(std::string("decode_png: ") +
                                (bytes.empty() ? "empty payload" : desc.message));
  }
  desc.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&desc);
    throw std::invalid_argument(std::string("decode_png: ") + desc.message);
  }
  return Image(static_cast<int>(desc.width), static_cast<int>(desc.height), std::move(px));
}

void save_png(const Image& img, const std::string& path) {
  const auto bytes = encode_png(img);
  write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Image load_png(const std::string& path) {
  const std::string raw = read_file(path);
  return decode_png(std::vector<std::uint8_t>(raw.begin(), raw.end()));
}

}  // namespace toolrl::imaging
