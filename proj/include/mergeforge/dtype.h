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

#ifndef MERGEFORGE_DTYPE_H_
#define MERGEFORGE_DTYPE_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace mf {

enum class DType { kF32, kF16, kBF16 };

size_t ElementSize(DType dtype);

// Container spelling: "F32", "F16", "BF16".
std::string_view DTypeName(DType dtype);
std::optional<DType> ParseDTypeName(std::string_view name);

// Scalar conversions. Narrowing rounds to nearest, ties to even. NaN inputs
// produce the canonical quiet NaN of the destination type.
inline constexpr uint16_t kCanonicalF16NaN = 0x7E00;
inline constexpr uint16_t kCanonicalBF16NaN = 0x7FC0;
inline constexpr uint32_t kCanonicalF32NaN = 0x7FC00000;

uint16_t FloatToBFloat16Bits(float value);
float BFloat16BitsToFloat(uint16_t bits);
uint16_t FloatToHalfBits(float value);
float HalfBitsToFloat(uint16_t bits);

}  // namespace mf

#endif  // MERGEFORGE_DTYPE_H_
