#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xmodal::binio {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) noexcept;

// Little-endian byte sink for the file formats.
class Writer {
 public:
  void magic(std::string_view m);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> vs);

  // Appends the CRC32 of everything written so far.
  void seal();
  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader. Every read past the end throws
// DataError("... truncated").
class Reader {
 public:
  Reader(std::vector<std::uint8_t> bytes, std::string what);

  // Verifies the trailing CRC32 and strips it. Throws DataError on mismatch.
  void verify_crc();
  void expect_magic(std::string_view m);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> out);

  std::size_t remaining() const noexcept { return end_ - pos_; }
  // Throws unless every payload byte was consumed.
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> buf_;
  std::string what_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes through a temporary sibling then renames over `path`.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace xmodal::binio
