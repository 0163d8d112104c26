#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tagv/error.hpp"

namespace tagv {

// Little-endian binary encode/decode. Writers build the whole payload in
// memory so a file is emitted in one shot; readers work on a loaded buffer
// and throw TruncatedError instead of reading past the end.

class ByteWriter {
 public:
  void put_bytes(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  void put_u8(std::uint8_t v) { put_bytes(&v, 1); }
  void put_u16(std::uint16_t v) { put_le(v); }
  void put_u32(std::uint32_t v) { put_le(v); }
  void put_u64(std::uint64_t v) { put_le(v); }
  void put_f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void put_string(const std::string& s) { put_bytes(s.data(), s.size()); }

  const std::string& bytes() const { return buf_; }

 private:
  template <class T>
  void put_le(T v) {
    unsigned char out[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    }
    put_bytes(out, sizeof(T));
  }

  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const void* data, std::size_t size)
      : p_(static_cast<const unsigned char*>(data)), size_(size) {}
  explicit ByteReader(const std::string& s) : ByteReader(s.data(), s.size()) {}

  std::size_t remaining() const { return size_ - pos_; }

  void get_bytes(void* out, std::size_t n) {
    if (n > remaining()) throw TruncatedError("unexpected end of data");
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  std::uint8_t get_u8() {
    std::uint8_t v;
    get_bytes(&v, 1);
    return v;
  }
  std::uint16_t get_u16() { return get_le<std::uint16_t>(); }
  std::uint32_t get_u32() { return get_le<std::uint32_t>(); }
  std::uint64_t get_u64() { return get_le<std::uint64_t>(); }
  float get_f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  std::string get_string(std::size_t n) {
    if (n > remaining()) throw TruncatedError("unexpected end of data");
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  template <class T>
  T get_le() {
    unsigned char in[sizeof(T)];
    get_bytes(in, sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(in[i]) << (8 * i));
    }
    return v;
  }

  const unsigned char* p_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace tagv
