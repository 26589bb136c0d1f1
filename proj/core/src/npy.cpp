#include "pgn/npy.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>

#include "pgn/errors.hpp"

namespace pgn {

static_assert(std::endian::native == std::endian::little,
              "NPY I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kPreambleLen = 10;  // magic + version + u16 header length
constexpr std::size_t kAlign = 64;

struct Header {
  std::string descr;
  bool fortran_order = false;
  Shape shape;
  std::size_t data_offset = 0;
};

// Minimal parser for the Python dict literal in an NPY v1.0 header.
class DictParser {
 public:
  DictParser(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  Header parse() {
    Header h;
    bool seen_descr = false, seen_order = false, seen_shape = false;
    skip_ws();
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = parse_string();
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        h.descr = parse_string();
        seen_descr = true;
      } else if (key == "fortran_order") {
        h.fortran_order = parse_bool();
        seen_order = true;
      } else if (key == "shape") {
        h.shape = parse_shape();
        seen_shape = true;
      } else {
        fail("unexpected header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != '}') {
        fail("expected ',' or '}' in header");
      }
    }
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters after header dict");
    if (!seen_descr || !seen_order || !seen_shape) fail("header is missing descr, fortran_order or shape");
    return h;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(msg, base_ + pos_); }

  char peek() const {
    if (pos_ >= text_.size()) fail("unexpected end of header");
    return text_[pos_];
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  std::string parse_string() {
    const char quote = peek();
    if (quote != '\'' && quote != '"') fail("expected a quoted string");
    ++pos_;
    const auto end = text_.find(quote, pos_);
    if (end == std::string_view::npos) fail("unterminated string");
    std::string out(text_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }
  bool parse_bool() {
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail("expected True or False");
  }
  Shape parse_shape() {
    Shape shape;
    expect('(');
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        break;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected a dimension size");
      std::size_t v = 0;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        v = v * 10 + static_cast<std::size_t>(text_[pos_] - '0');
        ++pos_;
      }
      shape.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
      else if (peek() != ')') fail("expected ',' or ')' in shape");
    }
    return shape;
  }

  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

Header parse_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kPreambleLen) throw FormatError("file shorter than the NPY preamble", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) throw FormatError("bad NPY magic string", 0);
  const auto major = static_cast<std::uint8_t>(bytes[6]);
  const auto minor = static_cast<std::uint8_t>(bytes[7]);
  if (major != 1 || minor != 0) {
    throw FormatError("unsupported NPY version " + std::to_string(major) + "." + std::to_string(minor), 6);
  }
  const std::size_t header_len = static_cast<std::size_t>(static_cast<std::uint8_t>(bytes[8])) |
                                 (static_cast<std::size_t>(static_cast<std::uint8_t>(bytes[9])) << 8);
  if (bytes.size() < kPreambleLen + header_len) {
    throw FormatError("header length field exceeds file size", 8);
  }
  std::string_view text(reinterpret_cast<const char*>(bytes.data()) + kPreambleLen, header_len);
  Header h = DictParser(text, kPreambleLen).parse();
  if (h.fortran_order) throw FormatError("Fortran-order arrays are not supported", kPreambleLen);
  h.data_offset = kPreambleLen + header_len;
  return h;
}

std::size_t shape_elements(const Header& h) {
  std::size_t n = 1;
  for (auto d : h.shape) n *= d;
  return n;
}

void check_payload(const Header& h, std::size_t item_size, std::size_t total) {
  const std::size_t need = shape_elements(h) * item_size;
  const std::size_t have = total - h.data_offset;
  if (have < need) {
    throw FormatError("truncated payload: expected " + std::to_string(need) + " bytes, found " +
                          std::to_string(have),
                      total);
  }
  if (have > need) {
    throw FormatError("payload has " + std::to_string(have - need) + " trailing bytes", h.data_offset + need);
  }
}

std::string shape_literal(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  if (shape.size() == 1) out += ",";
  return out + ")";
}

std::vector<std::byte> make_preamble(const std::string& descr, const Shape& shape) {
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " +
                     shape_literal(shape) + ", }";
  std::size_t total = kPreambleLen + dict.size() + 1;
  const std::size_t padded = (total + kAlign - 1) / kAlign * kAlign;
  dict.append(padded - total, ' ');
  dict.push_back('\n');
  const std::size_t header_len = dict.size();

  std::vector<std::byte> out(kPreambleLen + header_len);
  std::memcpy(out.data(), kMagic, kMagicLen);
  out[6] = std::byte{1};
  out[7] = std::byte{0};
  out[8] = static_cast<std::byte>(header_len & 0xff);
  out[9] = static_cast<std::byte>((header_len >> 8) & 0xff);
  std::memcpy(out.data() + kPreambleLen, dict.data(), header_len);
  return out;
}

template <typename T>
void append_values(std::vector<std::byte>& out, std::span<const double> values) {
  const std::size_t base = out.size();
  out.resize(base + values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T v = static_cast<T>(values[i]);
    std::memcpy(out.data() + base + i * sizeof(T), &v, sizeof(T));
  }
}

template <typename T>
T load(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace

std::vector<std::byte> encode_npy(const Tensor& tensor) {
  if (tensor.empty()) throw DimensionError("cannot encode an empty tensor");
  const bool f32 = tensor.dtype() == DType::F32;
  auto out = make_preamble(f32 ? "<f4" : "<f8", tensor.shape());
  if (f32) append_values<float>(out, tensor.data());
  else append_values<double>(out, tensor.data());
  return out;
}

Tensor decode_npy(std::span<const std::byte> bytes) {
  const Header h = parse_header(bytes);
  if (h.shape.empty()) throw FormatError("scalar (0-d) arrays are not supported", kPreambleLen);
  for (auto d : h.shape) {
    if (d == 0) throw FormatError("zero-size dimension in shape", kPreambleLen);
  }
  std::size_t item = 0;
  DType dtype;
  if (h.descr == "<f4") {
    item = 4;
    dtype = DType::F32;
  } else if (h.descr == "<f8") {
    item = 8;
    dtype = DType::F64;
  } else {
    throw FormatError("unsupported dtype '" + h.descr + "' (expected <f4 or <f8)", kPreambleLen);
  }
  check_payload(h, item, bytes.size());
  const std::size_t n = shape_elements(h);
  std::vector<double> data(n);
  const std::byte* src = bytes.data() + h.data_offset;
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = item == 4 ? static_cast<double>(load<float>(src + 4 * i)) : load<double>(src + 8 * i);
  }
  return Tensor(h.shape, std::move(data), dtype);
}

std::vector<std::byte> encode_npy(const LabelMap& labels) {
  if (labels.size() == 0) throw DimensionError("cannot encode an empty label map");
  auto out = make_preamble("<i4", {labels.height, labels.width});
  const std::size_t base = out.size();
  out.resize(base + labels.size() * 4);
  std::memcpy(out.data() + base, labels.labels.data(), labels.size() * 4);
  return out;
}

LabelMap decode_npy_labels(std::span<const std::byte> bytes) {
  const Header h = parse_header(bytes);
  if (h.shape.size() != 2 || h.shape[0] == 0 || h.shape[1] == 0) {
    throw FormatError("label map must be a non-empty 2-D array, got shape " + to_string(h.shape), kPreambleLen);
  }
  struct Kind {
    const char* descr;
    std::size_t size;
  };
  static constexpr Kind kinds[] = {{"|b1", 1}, {"|u1", 1}, {"|i1", 1}, {"<u2", 2}, {"<i2", 2},
                                   {"<u4", 4}, {"<i4", 4}, {"<u8", 8}, {"<i8", 8}};
  std::optional<Kind> kind;
  for (const auto& k : kinds) {
    if (h.descr == k.descr) kind = k;
  }
  if (!kind) throw FormatError("unsupported label dtype '" + h.descr + "'", kPreambleLen);
  check_payload(h, kind->size, bytes.size());

  LabelMap out(h.shape[0], h.shape[1]);
  const std::byte* src = bytes.data() + h.data_offset;
  const std::string_view d = kind->descr;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::byte* p = src + i * kind->size;
    std::int64_t v = 0;
    if (d == "|b1" || d == "|u1") v = load<std::uint8_t>(p);
    else if (d == "|i1") v = load<std::int8_t>(p);
    else if (d == "<u2") v = load<std::uint16_t>(p);
    else if (d == "<i2") v = load<std::int16_t>(p);
    else if (d == "<u4") v = load<std::uint32_t>(p);
    else if (d == "<i4") v = load<std::int32_t>(p);
    else if (d == "<i8") v = load<std::int64_t>(p);
    else v = static_cast<std::int64_t>(load<std::uint64_t>(p));
    if (v < INT32_MIN || v > INT32_MAX) {
      throw FormatError("label value out of int32 range", h.data_offset + i * kind->size);
    }
    out.labels[i] = static_cast<std::int32_t>(v);
  }
  return out;
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("failed reading " + path.string());
  return bytes;
}

void write_file(std::span<const std::byte> bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor read_npy(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_npy(bytes);
}

void write_npy(const Tensor& tensor, const std::filesystem::path& path) {
  write_file(encode_npy(tensor), path);
}

LabelMap read_npy_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_npy_labels(bytes);
}

void write_npy_labels(const LabelMap& labels, const std::filesystem::path& path) {
  write_file(encode_npy(labels), path);
}

}  // namespace pgn
