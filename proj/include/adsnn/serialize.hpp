#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "adsnn/tensor.hpp"

namespace adsnn {

inline constexpr std::uint8_t kTensorFormatVersion = 1;

// "ADSN", version byte, u32 rank, u32 dims, f32 data; all little-endian.
void append_tensor(std::string& out, const Tensor<float>& tensor);
// Reads one tensor starting at `offset` and advances it. Throws FormatError.
Tensor<float> parse_tensor(std::string_view bytes, std::size_t& offset);

void append_u32(std::string& out, std::uint32_t value);
std::uint32_t parse_u32(std::string_view bytes, std::size_t& offset);

std::string sha256_hex(std::string_view bytes);
std::string sha256_raw(std::string_view bytes);

}  // namespace adsnn
