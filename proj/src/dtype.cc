/* Copyright 2026 The MergeForge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "mergeforge/dtype.h"

#include <bit>

namespace mf {

size_t ElementSize(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF16: return 2;
    case DType::kBF16: return 2;
  }
  return 0;
}

std::string_view DTypeName(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "F32";
    case DType::kF16: return "F16";
    case DType::kBF16: return "BF16";
  }
  return "?";
}

std::optional<DType> ParseDTypeName(std::string_view name) {
  if (name == "F32") return DType::kF32;
  if (name == "F16") return DType::kF16;
  if (name == "BF16") return DType::kBF16;
  return std::nullopt;
}

uint16_t FloatToBFloat16Bits(float value) {
  const uint32_t bits = std::bit_cast<uint32_t>(value);
  if ((bits & 0x7FFFFFFFu) > 0x7F800000u) return kCanonicalBF16NaN;
  const uint32_t rounding_bias = 0x7FFFu + ((bits >> 16) & 1u);
  return static_cast<uint16_t>((bits + rounding_bias) >> 16);
}

float BFloat16BitsToFloat(uint16_t bits) {
  if ((bits & 0x7FFFu) > 0x7F80u) return std::bit_cast<float>(kCanonicalF32NaN);
  return std::bit_cast<float>(static_cast<uint32_t>(bits) << 16);
}

namespace {

// Shifts `mantissa` right by `shift` bits, rounding to nearest even.
uint32_t ShiftRoundEven(uint32_t mantissa, int shift) {
  const uint32_t quotient = mantissa >> shift;
  const uint32_t remainder = mantissa & ((1u << shift) - 1u);
  const uint32_t half = 1u << (shift - 1);
  if (remainder > half || (remainder == half && (quotient & 1u))) {
    return quotient + 1u;
  }
  return quotient;
}

}  // namespace

uint16_t FloatToHalfBits(float value) {
  const uint32_t bits = std::bit_cast<uint32_t>(value);
  const uint16_t sign = static_cast<uint16_t>((bits >> 16) & 0x8000u);
  const uint32_t magnitude = bits & 0x7FFFFFFFu;

  if (magnitude > 0x7F800000u) return kCanonicalF16NaN;
  // 65520 is the midpoint between the largest half (65504) and 2^16; it
  // rounds to even, i.e. up to infinity.
  if (magnitude >= 0x477FF000u) return sign | 0x7C00u;

  const int exponent = static_cast<int>(magnitude >> 23);
  const uint32_t mantissa = (magnitude & 0x7FFFFFu) | 0x800000u;

  if (exponent < 113) {
    // Half subnormal range, in units of 2^-24.
    const int shift = 126 - exponent;
    if (shift > 24) return sign;
    return sign | static_cast<uint16_t>(ShiftRoundEven(mantissa, shift));
  }
  // Carry out of the mantissa bumps the exponent field, which is the
  // correctly rounded result.
  const uint32_t rebased = (static_cast<uint32_t>(exponent - 112) << 10) |
                           ((magnitude & 0x7FFFFFu) >> 13);
  const uint32_t low = magnitude & 0x1FFFu;
  uint32_t rounded = rebased;
  if (low > 0x1000u || (low == 0x1000u && (rebased & 1u))) ++rounded;
  return sign | static_cast<uint16_t>(rounded);
}

float HalfBitsToFloat(uint16_t bits) {
  const uint32_t sign = static_cast<uint32_t>(bits & 0x8000u) << 16;
  const uint32_t exponent = (bits >> 10) & 0x1Fu;
  uint32_t mantissa = bits & 0x3FFu;

  if (exponent == 0x1F) {
    if (mantissa != 0) return std::bit_cast<float>(kCanonicalF32NaN);
    return std::bit_cast<float>(sign | 0x7F800000u);
  }
  if (exponent == 0) {
    if (mantissa == 0) return std::bit_cast<float>(sign);
    int e = -1;
    do {
      ++e;
      mantissa <<= 1;
    } while ((mantissa & 0x400u) == 0);
    const uint32_t f32_exponent = static_cast<uint32_t>(127 - 15 - e);
    return std::bit_cast<float>(sign | (f32_exponent << 23) |
                                ((mantissa & 0x3FFu) << 13));
  }
  return std::bit_cast<float>(sign | ((exponent + 112) << 23) |
                              (mantissa << 13));
}

}  // namespace mf
