#include "sbl/image.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <fstream>

#include "sbl/errors.hpp"

#ifdef SBL_HAVE_PNG
#include <png.h>
#endif

namespace sbl {

namespace {

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0F, 1.0F) * 255.0F));
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    int v = 0;
    if (!(in >> v)) throw DataError("malformed PPM header in " + path.string());
    return v;
  };
  if (magic != "P6") throw DataError("unsupported PPM variant '" + magic + "' in " + path.string());
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError("unsupported PPM geometry in " + path.string());
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError("truncated PPM data in " + path.string());
  }
  Image img(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0F;
  return img;
}

#ifdef SBL_HAVE_PNG
Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> raw(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&png);
    throw DataError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  Image img(static_cast<int>(png.width), static_cast<int>(png.height));
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0F;
  return img;
}
#endif

}  // namespace

nn::Tensor to_tensor(const Image& image) {
  nn::Tensor t(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = image.at(x, y, c);
    }
  }
  return t;
}

void quantize_8bit(Image& image) {
  for (float& v : image.pixels) v = static_cast<float>(to_byte(v)) / 255.0F;
}

Image read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm") return read_ppm(path);
#ifdef SBL_HAVE_PNG
  if (ext == ".png") return read_png(path);
#endif
  throw DataError("unsupported image format: " + path.string());
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), raw.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace sbl
