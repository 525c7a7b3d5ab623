#include "adsnn/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>

#include <openssl/sha.h>

namespace adsnn {
namespace {

constexpr std::string_view kTensorMagic = "ADSN";

void require(std::string_view bytes, std::size_t offset, std::size_t count) {
  if (offset > bytes.size() || bytes.size() - offset < count) throw FormatError("truncated tensor data");
}

}  // namespace

void append_u32(std::string& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
}

std::uint32_t parse_u32(std::string_view bytes, std::size_t& offset) {
  require(bytes, offset, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  offset += 4;
  return v;
}

void append_tensor(std::string& out, const Tensor<float>& tensor) {
  out.append(kTensorMagic);
  out.push_back(static_cast<char>(kTensorFormatVersion));
  append_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto d : tensor.shape()) append_u32(out, static_cast<std::uint32_t>(d));
  for (float v : tensor.data()) append_u32(out, std::bit_cast<std::uint32_t>(v));
}

Tensor<float> parse_tensor(std::string_view bytes, std::size_t& offset) {
  require(bytes, offset, kTensorMagic.size() + 1);
  if (bytes.substr(offset, kTensorMagic.size()) != kTensorMagic) throw FormatError("bad tensor magic");
  offset += kTensorMagic.size();
  const auto version = static_cast<std::uint8_t>(bytes[offset++]);
  if (version != kTensorFormatVersion) {
    throw FormatError("unsupported tensor format version " + std::to_string(version));
  }
  const std::uint32_t rank = parse_u32(bytes, offset);
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = parse_u32(bytes, offset);
  const std::size_t count = shape_size(shape);
  require(bytes, offset, count * 4);
  std::vector<float> data(count);
  for (auto& v : data) v = std::bit_cast<float>(parse_u32(bytes, offset));
  return Tensor<float>(std::move(shape), std::move(data));
}

std::string sha256_raw(std::string_view bytes) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest.data());
  return std::string(reinterpret_cast<const char*>(digest.data()), digest.size());
}

std::string sha256_hex(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  const std::string raw = sha256_raw(bytes);
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xF]);
  }
  return out;
}

}  // namespace adsnn
