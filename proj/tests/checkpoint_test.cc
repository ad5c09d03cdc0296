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

#include "mergeforge/checkpoint.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>
#include <thread>

#include "dtype_reference.h"
#include "json.hpp"
#include "mergeforge/error.h"
#include "test_util.h"

namespace mf {
namespace {

using testing::ReadFileBytes;
using testing::ScopedTempDir;
using testing::WriteFileBytes;
using namespace reference;

// Hand-assembles a container so reader tests do not depend on the writer.
std::string RawContainer(const std::string& header, const std::string& data) {
  std::string out(8, '\0');
  uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((n >> (8 * i)) & 0xFF);
  return out + header + data;
}

std::string FloatBytes(std::initializer_list<float> values) {
  std::string out;
  for (float v : values) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
  }
  return out;
}

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected mf::Error";
  return ErrorCode::kIoFailure;
}

TEST(CheckpointReaderTest, SingleTensorContainer) {
  ScopedTempDir dir;
  WriteFileBytes(dir / "a.safetensors",
                 RawContainer(R"({"a":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})",
                              FloatBytes({1, 2, 3, 4})));
  const auto reader = OpenCheckpoint(dir / "a.safetensors");
  ASSERT_EQ(reader.index().size(), 1u);
  const TensorSpec& spec = reader.Spec("a");
  EXPECT_EQ(spec.dtype, DType::kF32);
  EXPECT_EQ(spec.shape, (Shape{2, 2}));
  EXPECT_EQ(spec.begin, 0u);
  EXPECT_EQ(spec.end, 16u);

  const Tensor t = reader.ReadTensor("a");
  EXPECT_EQ(t.data.size(), 16u);
  EXPECT_EQ(t.ToFloats(), (std::vector<float>{1, 2, 3, 4}));
  EXPECT_EQ(reader.ReadTensor("a").data, t.data);
  EXPECT_EQ(CodeOf([&] { reader.ReadTensor("missing"); }),
            ErrorCode::kUnknownTensor);
}

TEST(CheckpointReaderTest, RejectsOverlappingOffsets) {
  ScopedTempDir dir;
  WriteFileBytes(
      dir / "o.safetensors",
      RawContainer(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                   R"("b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                   FloatBytes({1, 2, 3})));
  EXPECT_EQ(CodeOf([&] { OpenCheckpoint(dir / "o.safetensors"); }),
            ErrorCode::kOffsetOverlap);
}

TEST(CheckpointReaderTest, MalformedHeaders) {
  ScopedTempDir dir;
  const auto open_raw = [&](const std::string& bytes) {
    WriteFileBytes(dir / "m.safetensors", bytes);
    return CodeOf([&] { OpenCheckpoint(dir / "m.safetensors"); });
  };
  EXPECT_EQ(open_raw(RawContainer("{not json", "")), ErrorCode::kMalformedHeader);
  EXPECT_EQ(open_raw(RawContainer("[]", "")), ErrorCode::kMalformedHeader);
  EXPECT_EQ(open_raw(RawContainer(
                R"({"a":{"dtype":"Q4","shape":[1],"data_offsets":[0,4]}})",
                FloatBytes({1}))),
            ErrorCode::kMalformedHeader);
  // Span disagrees with dtype x shape.
  EXPECT_EQ(open_raw(RawContainer(
                R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,4]}})",
                FloatBytes({1, 2}))),
            ErrorCode::kMalformedHeader);
  // Duplicate key.
  EXPECT_EQ(open_raw(RawContainer(
                R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                R"("a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
                FloatBytes({1, 2}))),
            ErrorCode::kMalformedHeader);
  // Absurd length prefix.
  std::string huge(8, '\xFF');
  EXPECT_EQ(open_raw(huge + "{}"), ErrorCode::kMalformedHeader);
}

TEST(CheckpointReaderTest, TruncatedFiles) {
  ScopedTempDir dir;
  const auto open_raw = [&](const std::string& bytes) {
    WriteFileBytes(dir / "t.safetensors", bytes);
    return CodeOf([&] { OpenCheckpoint(dir / "t.safetensors"); });
  };
  EXPECT_EQ(open_raw("abc"), ErrorCode::kTruncatedFile);
  const std::string full = RawContainer(
      R"({"a":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})",
      FloatBytes({1, 2, 3, 4}));
  EXPECT_EQ(open_raw(full.substr(0, full.size() - 1)), ErrorCode::kTruncatedFile);
  EXPECT_EQ(open_raw(full.substr(0, 20)), ErrorCode::kTruncatedFile);
}

TEST(CheckpointWriterTest, EmptyStream) {
  ScopedTempDir dir;
  const WriteSummary summary = WriteCheckpoint(dir / "e.safetensors", {});
  EXPECT_EQ(summary.count, 0u);
  const auto reader = OpenCheckpoint(dir / "e.safetensors");
  EXPECT_TRUE(reader.index().empty());
  EXPECT_EQ(summary.bytes, reader.data_start());
}

TEST(CheckpointWriterTest, BFloat16DataRegion) {
  ScopedTempDir dir;
  const std::vector<float> values = {1.0f, -2.0f, 0.5f};
  const Tensor t = Tensor::FromFloats("w", {3}, values, DType::kBF16);
  const WriteSummary summary = WriteCheckpoint(dir / "b.safetensors", {&t, 1});
  const auto reader = OpenCheckpoint(dir / "b.safetensors");
  EXPECT_EQ(summary.bytes - reader.data_start(), 6u);
  EXPECT_EQ(reader.ReadTensor("w").ToFloats(), values);
  EXPECT_EQ(reader.data_start() % 8, 0u);
}

TEST(CheckpointWriterTest, DuplicateNamesRejected) {
  ScopedTempDir dir;
  const float one = 1.0f;
  std::vector<Tensor> tensors = {Tensor::FromFloats("x", {1}, {&one, 1}),
                                 Tensor::FromFloats("x", {1}, {&one, 1})};
  EXPECT_EQ(CodeOf([&] { WriteCheckpoint(dir / "d.safetensors", tensors); }),
            ErrorCode::kDuplicateName);
  EXPECT_FALSE(std::filesystem::exists(dir / "d.safetensors"));
  EXPECT_FALSE(std::filesystem::exists(dir / "d.safetensors.partial"));
}

TEST(CheckpointWriterTest, UnfinishedWriterLeavesNoFile) {
  ScopedTempDir dir;
  const float one = 1.0f;
  const Tensor t = Tensor::FromFloats("x", {1}, {&one, 1});
  TensorSpec other = t.spec;
  other.name = "y";
  {
    CheckpointWriter writer(dir / "p.safetensors", {t.spec, other});
  }
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
  {
    CheckpointWriter writer(dir / "p.safetensors", {t.spec, other});
    writer.Write(t);
    EXPECT_EQ(CodeOf([&] { writer.Finish(); }), ErrorCode::kIoFailure);
  }
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(CheckpointWriterTest, OutOfOrderWritesMatchInOrderLayout) {
  ScopedTempDir dir;
  std::mt19937_64 rng(7);
  std::vector<Tensor> tensors;
  for (int i = 0; i < 12; ++i) {
    tensors.push_back(testing::RandomTensor(rng, "t" + std::to_string(i)));
  }
  WriteCheckpoint(dir / "in_order.safetensors", tensors);

  std::vector<TensorSpec> plan;
  for (const auto& t : tensors) plan.push_back(t.spec);
  CheckpointWriter writer(dir / "shuffled.safetensors", plan);
  std::vector<std::thread> threads;
  for (size_t i = tensors.size(); i-- > 0;) {
    threads.emplace_back([&, i] { writer.Write(tensors[i]); });
  }
  for (auto& th : threads) th.join();
  writer.Finish();
  EXPECT_EQ(ReadFileBytes(dir / "in_order.safetensors"),
            ReadFileBytes(dir / "shuffled.safetensors"));
}

// write -> open -> read over random containers, compared field-by-field and
// byte-for-byte against the tensors that went in.
TEST(CheckpointRoundTripTest, RandomContainers) {
  ScopedTempDir dir;
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 25; ++trial) {
    const int count = trial == 0 ? 100 : 5;
    std::vector<Tensor> tensors;
    for (int i = 0; i < count; ++i) {
      tensors.push_back(
          testing::RandomTensor(rng, "model.layers." + std::to_string(i) + ".w"));
    }
    Metadata meta = {{"format", "pt"}, {"trial", std::to_string(trial)}};
    const auto path = dir / ("rt" + std::to_string(trial) + ".safetensors");
    const WriteSummary summary = WriteCheckpoint(path, tensors, meta);
    EXPECT_EQ(summary.count, static_cast<uint64_t>(count));
    EXPECT_EQ(summary.bytes, std::filesystem::file_size(path));

    const auto reader = OpenCheckpoint(path);
    EXPECT_EQ(reader.metadata(), meta);
    ASSERT_EQ(reader.index().size(), tensors.size());
    uint64_t cursor = 0;
    std::vector<TensorSpec> listed = reader.ListTensors();
    for (size_t i = 0; i < tensors.size(); ++i) {
      // Data region is laid out in stream order without gaps.
      EXPECT_EQ(listed[i].name, tensors[i].spec.name);
      EXPECT_EQ(listed[i].begin, cursor);
      cursor = listed[i].end;
      const Tensor back = reader.ReadTensor(tensors[i].spec.name);
      EXPECT_EQ(back.spec.dtype, tensors[i].spec.dtype);
      EXPECT_EQ(back.spec.shape, tensors[i].spec.shape);
      EXPECT_EQ(back.data, tensors[i].data);
    }
    EXPECT_EQ(reader.data_start() + cursor, summary.bytes);

    // Re-writing what was read reproduces the data region byte for byte.
    std::vector<Tensor> reread;
    for (const auto& spec : listed) reread.push_back(reader.ReadTensor(spec.name));
    const auto copy = dir / ("copy" + std::to_string(trial) + ".safetensors");
    WriteCheckpoint(copy, reread, meta);
    const std::string a = ReadFileBytes(path);
    const std::string b = ReadFileBytes(copy);
    EXPECT_EQ(a.substr(reader.data_start()),
              b.substr(OpenCheckpoint(copy).data_start()));
  }
}

TEST(CheckpointReaderTest, ConcurrentReadsAreConsistent) {
  ScopedTempDir dir;
  std::mt19937_64 rng(99);
  std::vector<Tensor> tensors;
  for (int i = 0; i < 16; ++i) {
    const auto values = testing::RandomFloats(rng, 257);
    tensors.push_back(Tensor::FromFloats("t" + std::to_string(i), {257}, values));
  }
  WriteCheckpoint(dir / "c.safetensors", tensors);
  const auto reader = OpenCheckpoint(dir / "c.safetensors");
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int th = 0; th < 8; ++th) {
    threads.emplace_back([&] {
      for (int rep = 0; rep < 20; ++rep) {
        for (const auto& t : tensors) {
          if (reader.ReadTensor(t.spec.name).data != t.data) ++mismatches;
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(mismatches.load(), 0);
}

TEST(ShardedCheckpointTest, UnifiedNamespace) {
  ScopedTempDir dir;
  std::mt19937_64 rng(5);
  std::vector<Tensor> tensors;
  for (int i = 0; i < 10; ++i) {
    const auto values = testing::RandomFloats(rng, 32);
    tensors.push_back(Tensor::FromFloats("w" + std::to_string(i), {4, 8}, values));
  }
  const auto index = WriteShardedCheckpoint(dir.path(), "model", tensors, 300);
  const auto source = ModelSource::Open(index);
  EXPECT_GT(source.shard_count(), 1u);
  ASSERT_EQ(source.index().size(), tensors.size());
  for (const auto& t : tensors) {
    EXPECT_EQ(source.ReadTensor(t.spec.name).data, t.data);
  }
  // A directory holding the index opens the same way.
  EXPECT_EQ(ModelSource::Open(dir.path()).index().size(), tensors.size());
  EXPECT_EQ(CodeOf([&] { source.ReadTensor("nope"); }), ErrorCode::kUnknownTensor);

  const std::string first_shard =
      nlohmann::json::parse(ReadFileBytes(index))["weight_map"]["w0"];
  nlohmann::json broken = {{"weight_map", {{"ghost", first_shard}}}};
  WriteFileBytes(dir / "broken.json", broken.dump());
  EXPECT_EQ(CodeOf([&] { ModelSource::Open(dir / "broken.json"); }),
            ErrorCode::kUnknownTensor);
}

TEST(DTypeTest, OneIsExactInBFloat16) {
  EXPECT_EQ(FloatToBFloat16Bits(1.0f), 0x3F80);
  const float one = 1.0f;
  const Tensor t = ConvertDType(Tensor::FromFloats("x", {1}, {&one, 1}), DType::kBF16);
  EXPECT_EQ(std::to_integer<int>(t.data[0]), 0x80);
  EXPECT_EQ(std::to_integer<int>(t.data[1]), 0x3F);
}

TEST(DTypeTest, BFloat16ExhaustiveWidenAndRoundTrip) {
  for (uint32_t b = 0; b < 0x10000; ++b) {
    const uint16_t bits = static_cast<uint16_t>(b);
    const float wide = BFloat16BitsToFloat(bits);
    const bool is_nan = (bits & 0x7F80) == 0x7F80 && (bits & 0x7F) != 0;
    if (is_nan) {
      EXPECT_TRUE(std::isnan(wide));
      EXPECT_EQ(std::bit_cast<uint32_t>(wide), kCanonicalF32NaN);
      EXPECT_EQ(FloatToBFloat16Bits(wide), kCanonicalBF16NaN);
      continue;
    }
    if ((bits & 0x7F80) != 0x7F80) {
      ASSERT_EQ(static_cast<double>(wide), ReferenceBFloat16Value(bits)) << b;
    }
    ASSERT_EQ(FloatToBFloat16Bits(wide), bits) << b;
  }
}

TEST(DTypeTest, HalfExhaustiveWidenAndRoundTrip) {
  for (uint32_t b = 0; b < 0x10000; ++b) {
    const uint16_t bits = static_cast<uint16_t>(b);
    const float wide = HalfBitsToFloat(bits);
    const bool is_nan = (bits & 0x7C00) == 0x7C00 && (bits & 0x3FF) != 0;
    if (is_nan) {
      EXPECT_EQ(FloatToHalfBits(wide), kCanonicalF16NaN);
      continue;
    }
    if ((bits & 0x7C00) != 0x7C00) {
      ASSERT_EQ(static_cast<double>(wide), ReferenceHalfValue(bits)) << b;
    }
    ASSERT_EQ(FloatToHalfBits(wide), bits) << b;
  }
}

TEST(DTypeTest, NarrowingMatchesReferenceOnRandomFloats) {
  const auto bf16_table = FiniteTable(&ReferenceBFloat16Value, 0x7F80);
  const auto f16_table = FiniteTable(&ReferenceHalfValue, 0x7C00);
  // Midpoint between the largest finite value and the next power of two.
  const double bf16_overflow = std::ldexp(255.5, 127 - 7);
  const double f16_overflow = 65520.0;

  std::mt19937_64 rng(42);
  std::uniform_int_distribution<uint32_t> any_bits;
  std::uniform_real_distribution<float> small(-70000.0f, 70000.0f);
  for (int i = 0; i < 200000; ++i) {
    float x = i % 2 ? std::bit_cast<float>(any_bits(rng)) : small(rng);
    if (std::isnan(x)) continue;
    ASSERT_EQ(FloatToBFloat16Bits(x),
              ReferenceNarrow(x, bf16_table, bf16_overflow, 0x7F80))
        << x;
    ASSERT_EQ(FloatToHalfBits(x), ReferenceNarrow(x, f16_table, f16_overflow, 0x7C00))
        << x;
  }
  // Exact ties resolve to even.
  EXPECT_EQ(FloatToBFloat16Bits(std::bit_cast<float>(0x3F808000u)), 0x3F80);
  EXPECT_EQ(FloatToBFloat16Bits(std::bit_cast<float>(0x3F818000u)), 0x3F82);
  EXPECT_EQ(FloatToHalfBits(65520.0f), 0x7C00);
  EXPECT_EQ(FloatToHalfBits(65519.0f), 0x7BFF);
}

TEST(DTypeTest, SlightlyAboveOneNarrowsToOne) {
  const float x = 1.0000001f;
  EXPECT_EQ(BFloat16BitsToFloat(FloatToBFloat16Bits(x)), 1.0f);
  const auto table = FiniteTable(&ReferenceBFloat16Value, 0x7F80);
  EXPECT_EQ(ReferenceNarrow(x, table, INFINITY, 0x7F80), 0x3F80);
}

TEST(DTypeTest, ConvertPreservesShapeAndIsIdentityForSameType) {
  std::mt19937_64 rng(3);
  const auto values = testing::RandomFloats(rng, 24);
  const Tensor f32 = Tensor::FromFloats("x", {2, 3, 4}, values);
  for (DType target : {DType::kF32, DType::kF16, DType::kBF16}) {
    const Tensor narrowed = ConvertDType(f32, target);
    EXPECT_EQ(narrowed.spec.shape, f32.spec.shape);
    EXPECT_EQ(narrowed.data.size(), 24 * ElementSize(target));
    EXPECT_EQ(ConvertDType(narrowed, target).data, narrowed.data);
    // Widening to F32 and back is lossless.
    EXPECT_EQ(ConvertDType(ConvertDType(narrowed, DType::kF32), target).data,
              narrowed.data);
  }
}

TEST(DTypeTest, NaNBecomesCanonical) {
  const float nan_payload = std::bit_cast<float>(0x7FA00001u);
  EXPECT_EQ(FloatToBFloat16Bits(nan_payload), kCanonicalBF16NaN);
  EXPECT_EQ(FloatToHalfBits(nan_payload), kCanonicalF16NaN);
  EXPECT_EQ(std::bit_cast<uint32_t>(HalfBitsToFloat(0xFE01)), kCanonicalF32NaN);
}

}  // namespace
}  // namespace mf
