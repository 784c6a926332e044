#include "xmodal/binio.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xmodal/errors.hpp"

namespace xmodal::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are written with native little-endian stores");

std::uint32_t crc32(std::span<const std::uint8_t> bytes) noexcept {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    c = ::crc32(c, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

}  // namespace

void Writer::magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }
void Writer::u8(std::uint8_t v) { buf_.push_back(v); }
void Writer::u32(std::uint32_t v) { put(buf_, v); }
void Writer::u64(std::uint64_t v) { put(buf_, v); }
void Writer::f64(double v) { put(buf_, v); }
void Writer::f64s(std::span<const double> vs) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(vs.data());
  buf_.insert(buf_.end(), p, p + vs.size_bytes());
}
void Writer::seal() { u32(crc32(buf_)); }

Reader::Reader(std::vector<std::uint8_t> bytes, std::string what)
    : buf_(std::move(bytes)), what_(std::move(what)), end_(buf_.size()) {}

void Reader::need(std::size_t n) const {
  if (end_ - pos_ < n) throw DataError(what_ + ": malformed file (truncated)");
}

void Reader::verify_crc() {
  if (buf_.size() < 4) throw DataError(what_ + ": malformed file (truncated)");
  std::uint32_t stored = 0;
  std::memcpy(&stored, buf_.data() + buf_.size() - 4, 4);
  const std::uint32_t actual =
      crc32(std::span<const std::uint8_t>(buf_.data(), buf_.size() - 4));
  if (stored != actual) throw DataError(what_ + ": checksum mismatch");
  end_ = buf_.size() - 4;
}

void Reader::expect_magic(std::string_view m) {
  need(m.size());
  if (std::memcmp(buf_.data() + pos_, m.data(), m.size()) != 0) {
    throw DataError(what_ + ": malformed file (bad magic, expected " + std::string(m) + ")");
  }
  pos_ += m.size();
}

std::uint8_t Reader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

double Reader::f64() {
  need(8);
  double v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

void Reader::f64s(std::span<double> out) {
  need(out.size_bytes());
  std::memcpy(out.data(), buf_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

void Reader::expect_end() const {
  if (pos_ != end_) throw DataError(what_ + ": malformed file (trailing bytes)");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " to " + path.string());
}

}  // namespace xmodal::binio
