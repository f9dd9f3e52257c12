#include "mifcn/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace mifcn {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is, const std::string& context) {
  std::string token;
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      if (!token.empty()) return token;
    } else {
      token.push_back(static_cast<char>(c));
    }
    c = is.get();
  }
  if (token.empty()) throw DataError(context + ": truncated header");
  return token;
}

Index header_number(std::istream& is, const std::string& context, const char* what) {
  const std::string token = header_token(is, context);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size() || v < 0) throw DataError(context + ": bad " + what + " '" + token + "'");
  return static_cast<Index>(v);
}

std::string describe_magic(const std::string& head) {
  if (head.size() >= 2 && head[0] == 'P') {
    switch (head[1]) {
      case '3':
      case '6': return "colour portable pixmap (multi-channel)";
      case '1':
      case '4': return "portable bitmap (1-bit)";
      case '7': return "portable arbitrary map";
      default: break;
    }
  }
  if (head.size() >= 4 && static_cast<unsigned char>(head[0]) == 0x89 && head.substr(1, 3) == "PNG") return "PNG";
  if (head.size() >= 2 && (head.substr(0, 2) == "II" || head.substr(0, 2) == "MM")) return "TIFF";
  if (head.size() >= 2 && static_cast<unsigned char>(head[0]) == 0xff && static_cast<unsigned char>(head[1]) == 0xd8)
    return "JPEG";
  return "unrecognised";
}

}  // namespace

Tensor read_pgm(std::istream& is, const std::string& context) {
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  if (is.gcount() != 2) throw DataError(context + ": empty or truncated file");
  if (magic != "P5" && magic != "P2") {
    std::string head = magic;
    char extra[2];
    is.read(extra, 2);
    head.append(extra, static_cast<std::size_t>(is.gcount()));
    throw DataError(context + ": unsupported format (" + describe_magic(head) +
                    "); expected an 8-bit single-channel PGM");
  }
  const Index width = header_number(is, context, "width");
  const Index height = header_number(is, context, "height");
  const Index maxval = header_number(is, context, "maxval");
  if (width == 0 || height == 0) throw DataError(context + ": zero-sized image");
  if (maxval > 255) throw DataError(context + ": unsupported format (16-bit samples, maxval " + std::to_string(maxval) + ")");
  if (maxval == 0) throw DataError(context + ": maxval must be positive");

  Tensor image({height, width});
  if (magic == "P5") {
    std::string raw(static_cast<std::size_t>(width * height), '\0');
    is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
      throw DataError(context + ": pixel data truncated (" + std::to_string(is.gcount()) + " of " +
                      std::to_string(raw.size()) + " bytes)");
    for (Index i = 0; i < image.size(); ++i) image[i] = static_cast<unsigned char>(raw[static_cast<std::size_t>(i)]);
  } else {
    for (Index i = 0; i < image.size(); ++i) {
      long v = -1;
      if (!(is >> v) || v < 0 || v > maxval) throw DataError(context + ": bad or missing ASCII sample");
      image[i] = static_cast<double>(v);
    }
  }
  if (maxval != 255) image.array() *= 255.0 / static_cast<double>(maxval);
  return image;
}

Tensor load_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image: " + path.string());
  return read_pgm(is, path.string());
}

unsigned char quantize_pixel(double value) {
  if (std::isnan(value)) return 0;
  const double clamped = std::clamp(value, 0.0, 255.0);
  // nearbyint follows the current rounding mode; the default mode rounds half to even.
  return static_cast<unsigned char>(std::nearbyint(clamped));
}

void write_pgm(std::ostream& os, const Tensor& image) {
  require(image.rank() == 2, "write_pgm: image must be [H,W], got " + shape_string(image.shape()));
  os << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::string raw(static_cast<std::size_t>(image.size()), '\0');
  for (Index i = 0; i < image.size(); ++i) raw[static_cast<std::size_t>(i)] = static_cast<char>(quantize_pixel(image[i]));
  os.write(raw.data(), static_cast<std::streamsize>(raw.size()));
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open image for writing: " + path.string());
  write_pgm(os, image);
  if (!os) throw DataError("failed writing image: " + path.string());
}

}  // namespace mifcn
