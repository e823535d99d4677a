// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "soupforge/dtype.hpp"

#include <bit>
#include <cstring>

#include "soupforge/error.hpp"

namespace soupforge {

static_assert(std::endian::native == std::endian::little,
              "payload codecs assume a little-endian host");

std::string_view dtype_name(DType t) noexcept {
    switch (t) {
        case DType::f32: return "F32";
        case DType::f16: return "F16";
        case DType::bf16: return "BF16";
        case DType::f64: return "F64";
    }
    return "?";
}

std::optional<DType> dtype_from_name(std::string_view name) noexcept {
    if (name == "F32") return DType::f32;
    if (name == "F16") return DType::f16;
    if (name == "BF16") return DType::bf16;
    if (name == "F64") return DType::f64;
    return std::nullopt;
}

float f16_bits_to_f32(std::uint16_t bits) noexcept {
    const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
    const std::uint32_t exp = (bits >> 10) & 0x1Fu;
    std::uint32_t man = bits & 0x3FFu;
    std::uint32_t out;
    if (exp == 0) {
        if (man == 0) {
            out = sign;  // signed zero
        } else {
            // subnormal: renormalize
            int shift = 0;
            while (!(man & 0x400u)) {
                man <<= 1;
                ++shift;
            }
            man &= 0x3FFu;
            out = sign | ((113u - static_cast<std::uint32_t>(shift)) << 23) | (man << 13);
        }
    } else if (exp == 31) {
        out = sign | 0x7F800000u | (man << 13);  // inf / nan
    } else {
        out = sign | ((exp + 112u) << 23) | (man << 13);
    }
    return std::bit_cast<float>(out);
}

std::uint16_t f32_to_f16_bits(float value) noexcept {
    const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
    const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
    const std::uint32_t abs = x & 0x7FFFFFFFu;

    if (abs >= 0x7F800000u) {  // inf or nan
        if (abs == 0x7F800000u) return sign | 0x7C00u;
        // quiet nan, keep top payload bits
        return sign | 0x7C00u | 0x200u | static_cast<std::uint16_t>((abs >> 13) & 0x1FFu);
    }
    if (abs >= 0x47800000u) {  // >= 2^16: overflows f16 after rounding
        return sign | 0x7C00u;
    }
    if (abs >= 0x38800000u) {  // normal range, exponent >= -14
        std::uint32_t exp = (abs >> 23) - 112u;
        std::uint32_t man = abs & 0x7FFFFFu;
        std::uint32_t half = (exp << 10) | (man >> 13);
        const std::uint32_t round = man & 0x1FFFu;
        if (round > 0x1000u || (round == 0x1000u && (half & 1u))) ++half;
        // a mantissa carry correctly bumps the exponent, possibly to inf
        return sign | static_cast<std::uint16_t>(half);
    }
    if (abs >= 0x33000000u) {  // subnormal range (>= 2^-25)
        const int exp = static_cast<int>(abs >> 23) - 127;
        const std::uint32_t man = (abs & 0x7FFFFFu) | 0x800000u;
        const int shift = -exp - 1;  // 14..24: bits dropped below the subnormal lsb at 2^-24
        std::uint32_t half = man >> shift;
        const std::uint32_t dropped = man & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (dropped > halfway || (dropped == halfway && (half & 1u))) ++half;
        return sign | static_cast<std::uint16_t>(half);
    }
    return sign;  // underflows to signed zero
}

float bf16_bits_to_f32(std::uint16_t bits) noexcept {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

std::uint16_t f32_to_bf16_bits(float value) noexcept {
    std::uint32_t x = std::bit_cast<std::uint32_t>(value);
    if ((x & 0x7FFFFFFFu) > 0x7F800000u) {
        // nan: keep sign and top payload, force quiet bit
        return static_cast<std::uint16_t>((x >> 16) | 0x40u);
    }
    const std::uint32_t lsb = (x >> 16) & 1u;
    x += 0x7FFFu + lsb;
    return static_cast<std::uint16_t>(x >> 16);
}

namespace {

template <typename T>
inline T load_le(const std::byte* p) noexcept {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

template <typename T>
inline void store_le(std::byte* p, T v) noexcept {
    std::memcpy(p, &v, sizeof(T));
}

void check_sizes(DType t, std::size_t byte_count, std::size_t elem_count) {
    if (byte_count != elem_count * dtype_size(t)) {
        throw Error(Errc::invalid_argument, "element/byte count mismatch in codec");
    }
}

}  // namespace

void decode_to_f64(DType t, std::span<const std::byte> bytes, std::span<double> out) {
    check_sizes(t, bytes.size(), out.size());
    const std::byte* p = bytes.data();
    switch (t) {
        case DType::f32:
            for (double& v : out) { v = load_le<float>(p); p += 4; }
            break;
        case DType::f16:
            for (double& v : out) { v = f16_bits_to_f32(load_le<std::uint16_t>(p)); p += 2; }
            break;
        case DType::bf16:
            for (double& v : out) { v = bf16_bits_to_f32(load_le<std::uint16_t>(p)); p += 2; }
            break;
        case DType::f64:
            for (double& v : out) { v = load_le<double>(p); p += 8; }
            break;
    }
}

void encode_from_f64(DType t, std::span<const double> values, std::span<std::byte> out) {
    check_sizes(t, out.size(), values.size());
    std::byte* p = out.data();
    switch (t) {
        case DType::f32:
            for (double v : values) { store_le(p, static_cast<float>(v)); p += 4; }
            break;
        case DType::f16:
            for (double v : values) { store_le(p, f32_to_f16_bits(static_cast<float>(v))); p += 2; }
            break;
        case DType::bf16:
            for (double v : values) { store_le(p, f32_to_bf16_bits(static_cast<float>(v))); p += 2; }
            break;
        case DType::f64:
            for (double v : values) { store_le(p, v); p += 8; }
            break;
    }
}

void accumulate_sum(DType t, std::span<const std::byte> bytes, std::span<double> acc) {
    check_sizes(t, bytes.size(), acc.size());
    const std::byte* p = bytes.data();
    switch (t) {
        case DType::f32:
            for (double& a : acc) { a += load_le<float>(p); p += 4; }
            break;
        case DType::f16:
            for (double& a : acc) { a += f16_bits_to_f32(load_le<std::uint16_t>(p)); p += 2; }
            break;
        case DType::bf16:
            for (double& a : acc) { a += bf16_bits_to_f32(load_le<std::uint16_t>(p)); p += 2; }
            break;
        case DType::f64:
            for (double& a : acc) { a += load_le<double>(p); p += 8; }
            break;
    }
}

const char* errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::malformed_header: return "malformed_header";
        case Errc::truncated_payload: return "truncated_payload";
        case Errc::payload_size_mismatch: return "payload_size_mismatch";
        case Errc::duplicate_tensor: return "duplicate_tensor";
        case Errc::unsupported_dtype: return "unsupported_dtype";
        case Errc::overlapping_ranges: return "overlapping_ranges";
        case Errc::invalid_tensor_entry: return "invalid_tensor_entry";
        case Errc::io_error: return "io_error";
        case Errc::missing_tensor: return "missing_tensor";
        case Errc::shape_mismatch: return "shape_mismatch";
        case Errc::dtype_mismatch: return "dtype_mismatch";
        case Errc::invalid_manifest: return "invalid_manifest";
        case Errc::unknown_trajectory: return "unknown_trajectory";
        case Errc::invalid_selection: return "invalid_selection";
        case Errc::missing_eval_wer: return "missing_eval_wer";
        case Errc::too_few_trajectories: return "too_few_trajectories";
        case Errc::invalid_plan: return "invalid_plan";
        case Errc::oracle_failure: return "oracle_failure";
        case Errc::invalid_corpus: return "invalid_corpus";
        case Errc::duplicate_utterance: return "duplicate_utterance";
        case Errc::missing_duration: return "missing_duration";
        case Errc::invalid_buckets: return "invalid_buckets";
        case Errc::invalid_argument: return "invalid_argument";
        case Errc::out_of_range: return "out_of_range";
    }
    return "unknown";
}

}  // namespace soupforge
