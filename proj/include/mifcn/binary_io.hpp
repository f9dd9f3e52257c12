#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "mifcn/errors.hpp"
#include "mifcn/tensor.hpp"

namespace mifcn::io {

/// Little-endian writer for the checkpoint and patch-archive containers.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void bytes(std::string_view raw) { os_.write(raw.data(), static_cast<std::streamsize>(raw.size())); }

  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (Index extent : t.shape()) i64(extent);
    for (double v : t.values()) f64(v);
  }

 private:
  void little_endian(std::uint64_t v, int width) {
    char buf[8];
    for (int i = 0; i < width; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os_.write(buf, width);
  }

  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string context) : is_(is), context_(std::move(context)) {}

  std::string bytes(std::size_t n) {
    std::string out(n, '\0');
    is_.read(out.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw DataError(context_ + ": unexpected end of file");
    return out;
  }

  std::uint32_t u32() { return static_cast<std::uint32_t>(little_endian(4)); }
  std::uint64_t u64() { return little_endian(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string string(std::size_t max_length = 1 << 16) {
    const std::uint32_t n = u32();
    if (n > max_length) throw DataError(context_ + ": implausible string length " + std::to_string(n));
    return bytes(n);
  }

  Tensor tensor(Index max_elements = Index{1} << 31) {
    const std::uint32_t rank = u32();
    if (rank > 8) throw DataError(context_ + ": implausible tensor rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::int64_t extent = i64();
      if (extent < 0 || extent > max_elements) throw DataError(context_ + ": bad tensor extent");
      shape.push_back(extent);
    }
    if (shape_size(shape) > max_elements) throw DataError(context_ + ": tensor too large");
    Tensor t(shape);
    for (double& v : t.values()) v = f64();
    return t;
  }

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

  const std::string& context() const { return context_; }

 private:
  std::uint64_t little_endian(int width) {
    const std::string raw = bytes(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    return v;
  }

  std::istream& is_;
  std::string context_;
};

}  // namespace mifcn::io
