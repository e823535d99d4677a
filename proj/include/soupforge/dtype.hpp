// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

namespace soupforge {

/// Element types a checkpoint may store. Merging is defined over real-valued
/// weights only, so integer tensors are rejected at the container layer.
enum class DType : std::uint8_t { f32, f16, bf16, f64 };

constexpr std::size_t dtype_size(DType t) noexcept {
    switch (t) {
        case DType::f16:
        case DType::bf16: return 2;
        case DType::f32: return 4;
        case DType::f64: return 8;
    }
    return 0;
}

/// Container-format spelling ("F32", "F16", "BF16", "F64").
std::string_view dtype_name(DType t) noexcept;
std::optional<DType> dtype_from_name(std::string_view name) noexcept;

// Scalar conversions. Payload bytes are little-endian; the en/decoders below
// assume a little-endian host (checked at startup via static_assert in the
// implementation).
float f16_bits_to_f32(std::uint16_t bits) noexcept;
std::uint16_t f32_to_f16_bits(float value) noexcept;  // round-to-nearest-even
float bf16_bits_to_f32(std::uint16_t bits) noexcept;
std::uint16_t f32_to_bf16_bits(float value) noexcept;  // round-to-nearest-even

/// Decode `count` elements from raw little-endian bytes into doubles.
/// `bytes.size()` must equal `out.size() * dtype_size(t)`.
void decode_to_f64(DType t, std::span<const std::byte> bytes, std::span<double> out);

/// Encode doubles into raw bytes, rounding once to the storage dtype.
void encode_from_f64(DType t, std::span<const double> values, std::span<std::byte> out);

/// acc[j] += decode(bytes[j]).
void accumulate_sum(DType t, std::span<const std::byte> bytes, std::span<double> acc);

}  // namespace soupforge
