#pragma once

// Little-endian binary encoding helpers shared by the dataset cache and the
// checkpoint format. Writers build an in-memory buffer that is flushed in
// one call; readers work over a fully loaded buffer so truncation is
// detected by bounds checks rather than stream state.

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>

#include "irnet/error.hpp"

namespace irnet::binio {

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::string& buffer() const { return buf_; }

 private:
  void le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context)
      : data_(data), context_(std::move(context)) {}

  std::string_view bytes(std::size_t n) {
    if (pos_ + n > data_.size())
      raise(Errc::bad_config, context_ + ": truncated (needed " + std::to_string(n) +
                                  " bytes at offset " + std::to_string(pos_) + ")");
    std::string_view out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(bytes(n));
  }
  bool exhausted() const { return pos_ == data_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::uint64_t le(int width) {
    std::string_view b = bytes(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[static_cast<std::size_t>(i)]))
           << (8 * i);
    return v;
  }

  std::string_view data_;
  std::string context_;
  std::size_t pos_ = 0;
};

/// CRC-32 (reflected, polynomial 0xEDB88320) over a byte buffer.
std::uint32_t crc32(std::string_view data);

/// Whole-file helpers; both raise IoError on failure.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view data);

}  // namespace irnet::binio
