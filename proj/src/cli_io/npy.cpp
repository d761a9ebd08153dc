#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>
#include <vector>

#include "featup/io.hpp"

namespace featup {

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kPreamble = 10;  // magic, version, u16 header length
constexpr std::size_t kAlign = 64;

// Just enough of the Python literal grammar for a version 1.0 header dict:
// string keys, and string, boolean or integer-tuple values.
class HeaderParser {
 public:
  HeaderParser(std::string_view text, const std::string& origin) : s_(text), origin_(origin) {}

  struct Header {
    std::string descr;
    bool fortran_order = false;
    std::vector<long long> shape;
    bool has_descr = false, has_order = false, has_shape = false;
  };

  Header parse() {
    Header h;
    expect('{');
    skip_ws();
    while (peek() != '}') {
      const std::string key = string_literal();
      expect(':');
      skip_ws();
      if (key == "descr") {
        h.descr = string_literal();
        h.has_descr = true;
      } else if (key == "fortran_order") {
        h.fortran_order = boolean();
        h.has_order = true;
      } else if (key == "shape") {
        h.shape = tuple();
        h.has_shape = true;
      } else {
        fail("unexpected header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        skip_ws();
      } else if (peek() != '}') {
        fail("expected ',' or '}'");
      }
    }
    ++pos_;
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters after header dict");
    if (!h.has_descr || !h.has_order || !h.has_shape) fail("header is missing descr, fortran_order or shape");
    return h;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(origin_ + ": malformed npy header: " + what);
  }
  char peek() const {
    if (pos_ >= s_.size()) fail("unexpected end of header");
    return s_[pos_];
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  void expect(char c) {
    skip_ws();
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string string_literal() {
    skip_ws();
    const char q = peek();
    if (q != '\'' && q != '"') fail("expected a string");
    const std::size_t end = s_.find(q, pos_ + 1);
    if (end == std::string_view::npos) fail("unterminated string");
    std::string out(s_.substr(pos_ + 1, end - pos_ - 1));
    pos_ = end + 1;
    return out;
  }
  bool boolean() {
    if (s_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail("expected True or False");
  }
  std::vector<long long> tuple() {
    expect('(');
    std::vector<long long> dims;
    skip_ws();
    while (peek() != ')') {
      if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected a dimension");
      long long v = 0;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
        v = v * 10 + (s_[pos_++] - '0');
        if (v > (1LL << 40)) fail("dimension too large");
      }
      if (pos_ < s_.size() && s_[pos_] == 'L') ++pos_;
      dims.push_back(v);
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        skip_ws();
      } else if (peek() != ')') {
        fail("expected ',' or ')' in shape");
      }
    }
    ++pos_;
    return dims;
  }

  std::string_view s_;
  std::string origin_;
  std::size_t pos_ = 0;
};

float load_le(const char* p) {
  std::uint32_t u;
  std::memcpy(&u, p, 4);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

void store_le(float f, char* p) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  std::memcpy(p, &u, 4);
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw FormatError("short write to " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw FormatError("cannot replace " + path.string() + ": " + ec.message());
  }
}

FeatureMap decode_npy(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < kPreamble || bytes.substr(0, kMagicLen) != std::string_view(kMagic, kMagicLen)) {
    throw FormatError(origin + ": not an npy file (bad magic)");
  }
  const int major = static_cast<unsigned char>(bytes[6]);
  const int minor = static_cast<unsigned char>(bytes[7]);
  if (major != 1 || minor != 0) {
    throw FormatError(origin + ": unsupported npy version " + std::to_string(major) + "." + std::to_string(minor));
  }
  const std::size_t header_len =
      static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
  if (bytes.size() < kPreamble + header_len) throw FormatError(origin + ": truncated npy header");
  const auto h = HeaderParser(bytes.substr(kPreamble, header_len), origin).parse();

  if (h.descr != "<f4") throw FormatError(origin + ": unsupported dtype '" + h.descr + "' (need little-endian float32 '<f4')");
  if (h.fortran_order) throw FormatError(origin + ": unsupported Fortran-order array (need C order)");
  std::vector<long long> dims = h.shape;
  if (dims.size() == 4) {
    if (dims[0] != 1) throw FormatError(origin + ": 4-D arrays must have batch size 1");
    dims.erase(dims.begin());
  }
  if (dims.size() != 3) {
    throw FormatError(origin + ": expected shape (C,H,W) or (1,C,H,W), got rank " + std::to_string(h.shape.size()));
  }
  for (long long d : dims) {
    if (d < 1) throw FormatError(origin + ": zero-sized dimension");
  }
  const std::size_t count = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  const std::string_view payload = bytes.substr(kPreamble + header_len);
  if (payload.size() != count * 4) {
    throw FormatError(origin + ": payload has " + std::to_string(payload.size()) + " bytes, shape needs " +
                      std::to_string(count * 4));
  }
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = load_le(payload.data() + 4 * i);
  return FeatureMap(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                    std::move(data));
}

std::string encode_npy(const FeatureMap& fm) {
  if (fm.empty()) throw DimensionError("cannot write an empty feature map");
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(fm.channels()) + ", " +
                       std::to_string(fm.height()) + ", " + std::to_string(fm.width()) + "), }";
  const std::size_t total = (kPreamble + header.size() + 1 + kAlign - 1) / kAlign * kAlign;
  header.append(total - kPreamble - header.size() - 1, ' ');
  header.push_back('\n');

  std::string out(kMagic, kMagicLen);
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(header.size() & 0xff));
  out.push_back(static_cast<char>(header.size() >> 8));
  out += header;
  const std::size_t base = out.size();
  out.resize(base + fm.size() * 4);
  for (std::size_t i = 0; i < fm.size(); ++i) store_le(fm.data()[i], out.data() + base + 4 * i);
  return out;
}

FeatureMap read_npy(const std::filesystem::path& path) { return decode_npy(read_file(path), path.string()); }

void write_npy(const FeatureMap& fm, const std::filesystem::path& path) { write_file_atomic(path, encode_npy(fm)); }

}  // namespace featup
