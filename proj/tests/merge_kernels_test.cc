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

#include "mergeforge/merge_kernels.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "merge_oracle.h"
#include "mergeforge/error.h"
#include "test_util.h"

namespace mf {
namespace {

Tensor Vec(std::vector<float> values, const std::string& name = "t") {
  return Tensor::FromFloats(name, {values.size()}, values);
}

TaskVector Tv(std::vector<double> delta, int source = 0) {
  return TaskVector{"t", std::move(delta), source};
}

std::vector<double> AsDoubles(const Tensor& t) {
  const auto f = t.ToFloats();
  return {f.begin(), f.end()};
}

void ExpectClose(const std::vector<double>& got, const std::vector<double>& want,
                 double rel = 1e-6) {
  ASSERT_EQ(got.size(), want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    EXPECT_NEAR(got[i], want[i], rel * std::max(1.0, std::fabs(want[i]))) << i;
  }
}

TEST(TaskVectorTest, Examples) {
  const Tensor base = Vec({0, 0, 0});
  EXPECT_EQ(ComputeTaskVector(base, base).delta, (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(ComputeTaskVector(Vec({1, -2, 3}), base).delta,
            (std::vector<double>{1, -2, 3}));

  std::mt19937_64 rng(1);
  const auto a = testing::RandomFloats(rng, 64);
  const auto b = testing::RandomFloats(rng, 64);
  const TaskVector tv = ComputeTaskVector(Vec(a), Vec(b), 3);
  EXPECT_EQ(tv.source_index, 3);
  for (size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(tv.delta[i], static_cast<double>(a[i]) - static_cast<double>(b[i]));
  }
}

TEST(TaskVectorTest, Errors) {
  try {
    ComputeTaskVector(Vec({1, 2}), Vec({1, 2, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  try {
    ComputeTaskVector(Vec({1, NAN}), Vec({1, 2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteValue);
  }
}

TEST(TrimByDensityTest, Examples) {
  EXPECT_EQ(TrimByDensity(Tv({1, -2, 3}), 2.0 / 3.0).delta,
            (std::vector<double>{0, -2, 3}));
  EXPECT_EQ(TrimByDensity(Tv({1, -2, 3}), 1.0).delta, (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(TrimByDensity(Tv({5, 5, 1}), 1.0 / 3.0).delta,
            (std::vector<double>{5, 0, 0}));
  EXPECT_EQ(TrimByDensity(Tv({-5, 5, 5}), 2.0 / 3.0).delta,
            (std::vector<double>{-5, 5, 0}));
  EXPECT_TRUE(TrimByDensity(Tv({}), 0.5).delta.empty());
}

TEST(TrimByDensityTest, MatchesSortOracleAndIsMonotone) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> small_int(-3, 3);
  std::uniform_real_distribution<double> unit(0.01, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> delta(1 + trial % 40);
    // Small integers force plenty of magnitude ties.
    for (double& d : delta) d = small_int(rng);
    const double d1 = unit(rng);
    const double d2 = std::min(1.0, d1 + unit(rng) / 2);
    const auto t1 = TrimByDensity(Tv(delta), d1).delta;
    const auto t2 = TrimByDensity(Tv(delta), d2).delta;
    EXPECT_EQ(t1, oracle::Trim(delta, d1));
    EXPECT_EQ(t2, oracle::Trim(delta, d2));
    // Retained index sets are nested, judged by rank rather than value so
    // zero entries count as retained or not consistently.
    std::vector<size_t> order(delta.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return std::fabs(delta[a]) != std::fabs(delta[b])
                 ? std::fabs(delta[a]) > std::fabs(delta[b])
                 : a < b;
    });
    const long k1 = oracle::KeepCount(d1, static_cast<long>(delta.size()));
    const long k2 = oracle::KeepCount(d2, static_cast<long>(delta.size()));
    EXPECT_LE(k1, k2);
    for (long r = 0; r < k1; ++r) EXPECT_EQ(t2[order[r]], delta[order[r]]);
  }
}

TEST(ElectSignsTest, Examples) {
  const std::vector<TaskVector> one = {Tv({2, -1, 0})};
  EXPECT_EQ(ElectSigns(one), (std::vector<int8_t>{1, -1, 0}));
  const std::vector<TaskVector> two = {Tv({2, -1, 3}), Tv({-2, 2, 1})};
  EXPECT_EQ(ElectSigns(two), (std::vector<int8_t>{0, 1, 1}));
  const std::vector<TaskVector> opposite = {Tv({1.5, -4}), Tv({-1.5, 4})};
  EXPECT_EQ(ElectSigns(opposite), (std::vector<int8_t>{0, 0}));
}

TEST(DisjointMergeTest, Examples) {
  const std::vector<TaskVector> two = {Tv({2, -1, 3}), Tv({-2, 2, 1})};
  const std::vector<double> weights = {1, 1};
  const auto signs = ElectSigns(two);
  EXPECT_EQ(DisjointMerge(two, weights, signs, true), (std::vector<double>{0, 2, 2}));
  EXPECT_EQ(DisjointMerge(two, weights, signs, false), (std::vector<double>{0, 2, 4}));

  const std::vector<TaskVector> one = {Tv({0.5, -3, 0})};
  const std::vector<double> w1 = {1};
  EXPECT_EQ(DisjointMerge(one, w1, ElectSigns(one), true), one[0].delta);
}

TEST(DisjointMergeTest, ScalingWeightsKeepsSignsAndNormalizedResult) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> weight(0.1, 2.0);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t models = 1 + trial % 4;
    std::vector<TaskVector> raw;
    std::vector<double> w;
    for (size_t m = 0; m < models; ++m) {
      std::vector<double> delta(17);
      std::normal_distribution<double> n;
      for (double& d : delta) d = n(rng);
      raw.push_back(Tv(delta));
      w.push_back(weight(rng));
    }
    const double c = trial % 2 ? std::ldexp(1.0, trial % 7) : scale(rng);
    std::vector<TaskVector> weighted, scaled;
    std::vector<double> cw;
    for (size_t m = 0; m < models; ++m) {
      weighted.push_back(ScaleTaskVector(raw[m], w[m]));
      scaled.push_back(ScaleTaskVector(raw[m], w[m] * c));
      cw.push_back(w[m] * c);
    }
    EXPECT_EQ(ElectSigns(weighted), ElectSigns(scaled));
    const auto a = DisjointMerge(weighted, w, ElectSigns(weighted), true);
    const auto b = DisjointMerge(scaled, cw, ElectSigns(scaled), true);
    if (trial % 2) {
      EXPECT_EQ(a, b);  // power-of-two scaling is exact
    } else {
      ExpectClose(a, b, 1e-12);
    }
  }
}

TEST(TiesMergeTest, WorkedExample) {
  const Tensor base = Vec({0, 0, 0});
  const std::vector<Tensor> models = {Vec({1, -2, 3}), Vec({2, 1, -0.5})};
  const std::vector<double> weights = {1, 1};
  const std::vector<double> densities = {2.0 / 3.0, 2.0 / 3.0};
  KernelStats stats;
  const Tensor merged = TiesMerge(base, models, weights, densities, true, true, &stats);
  EXPECT_EQ(merged.spec.dtype, DType::kF32);
  EXPECT_EQ(merged.ToFloats(), (std::vector<float>{2, -2, 3}));
  EXPECT_EQ(stats.trimmed_fraction, (std::vector<double>{1.0 / 3.0, 1.0 / 3.0}));
  // Element 1 (-2 vs +1) is the only disagreement.
  EXPECT_DOUBLE_EQ(stats.sign_conflict_fraction, 1.0 / 3.0);
}

TEST(TiesMergeTest, SingleModelIsTransplantedExactly) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> weight(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor base = Vec(testing::RandomFloats(rng, 129));
    const Tensor model = Vec(testing::RandomFloats(rng, 129, 2.0f));
    double w = trial == 0 ? 1.0 : weight(rng);
    if (w == 0.0) w = 0.5;
    const std::vector<Tensor> models = {model};
    const std::vector<double> weights = {w};
    const std::vector<double> densities = {1.0};
    const Tensor merged = TiesMerge(base, models, weights, densities, true, trial % 2);
    EXPECT_EQ(merged.data, model.data) << "w=" << w;
  }
}

TEST(TiesMergeTest, ModelsEqualToBaseGiveBase) {
  std::mt19937_64 rng(6);
  const Tensor base = Vec(testing::RandomFloats(rng, 40));
  const std::vector<Tensor> models = {base, base, base};
  const std::vector<double> weights = {0.3, 0.5, 0.2};
  const std::vector<double> densities = {0.5, 0.75, 1.0};
  EXPECT_EQ(TiesMerge(base, models, weights, densities, true, false).data, base.data);
}

TEST(TiesMergeTest, AgreesWithOracleAndIgnoresMaskWidth) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> weight(-0.5, 1.5);
  std::uniform_real_distribution<double> density(0.05, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t n = 1 + trial % 64;
    const size_t count = 1 + trial % 4;
    const auto base_values = testing::RandomFloats(rng, n);
    std::vector<std::vector<float>> model_values;
    std::vector<Tensor> models;
    std::vector<double> weights, densities;
    for (size_t m = 0; m < count; ++m) {
      model_values.push_back(testing::RandomFloats(rng, n));
      models.push_back(Vec(model_values.back()));
      weights.push_back(weight(rng));
      densities.push_back(density(rng));
    }
    const bool normalize = trial % 3 != 0;
    const Tensor narrow =
        TiesMerge(Vec(base_values), models, weights, densities, normalize, true);
    const Tensor wide =
        TiesMerge(Vec(base_values), models, weights, densities, normalize, false);
    EXPECT_EQ(narrow.data, wide.data);
    ExpectClose(AsDoubles(narrow),
                oracle::Ties(base_values, model_values, weights, densities, normalize));
  }
}

TEST(TiesMergeTest, ShapeMismatch) {
  const std::vector<Tensor> models = {Vec({1, 2})};
  const std::vector<double> one = {1};
  EXPECT_THROW(TiesMerge(Vec({1, 2, 3}), models, one, one, true, true), Error);
}

TEST(LinearMergeTest, Examples) {
  std::mt19937_64 rng(8);
  const Tensor a = Vec(testing::RandomFloats(rng, 33));
  const Tensor b = Vec(testing::RandomFloats(rng, 33));
  const std::vector<Tensor> ab = {a, b};
  EXPECT_EQ(LinearMerge(ab, std::vector<double>{1, 0}, false).data, a.data);
  EXPECT_EQ(LinearMerge(ab, std::vector<double>{1, 0}, true).data, a.data);

  const std::vector<Tensor> two_four = {Vec({2}), Vec({4})};
  EXPECT_EQ(LinearMerge(two_four, std::vector<double>{0.5, 0.5}, true).ToFloats(),
            (std::vector<float>{3}));

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<float>> values;
    std::vector<Tensor> tensors;
    std::vector<double> weights;
    std::uniform_real_distribution<double> w(-1, 1);
    for (int m = 0; m < 3; ++m) {
      values.push_back(testing::RandomFloats(rng, 50));
      tensors.push_back(Vec(values.back()));
      weights.push_back(w(rng));
    }
    ExpectClose(AsDoubles(LinearMerge(tensors, weights, false)),
                oracle::Linear(values, weights, false));
  }
}

TEST(LinearMergeTest, Errors) {
  const std::vector<Tensor> tensors = {Vec({1}), Vec({2})};
  try {
    LinearMerge(tensors, std::vector<double>{1, -1}, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroWeightSum);
  }
  const std::vector<Tensor> ragged = {Vec({1}), Vec({2, 3})};
  try {
    LinearMerge(ragged, std::vector<double>{1, 1}, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(SlerpMergeTest, QuarterCircleMidpoint) {
  const auto mid = SlerpMerge(Vec({1, 0}), Vec({0, 1}), 0.5).ToFloats();
  EXPECT_NEAR(mid[0], std::sqrt(2.0) / 2, 1e-7);
  EXPECT_NEAR(mid[1], std::sqrt(2.0) / 2, 1e-7);
}

TEST(SlerpMergeTest, EndpointsAndFallbacks) {
  std::mt19937_64 rng(9);
  const Tensor a = Vec(testing::RandomFloats(rng, 77));
  const Tensor b = Vec(testing::RandomFloats(rng, 77));
  EXPECT_EQ(SlerpMerge(a, b, 0.0).data, a.data);
  EXPECT_EQ(SlerpMerge(a, b, 1.0).data, b.data);

  std::vector<float> doubled = a.ToFloats();
  for (float& v : doubled) v *= 2;
  const Tensor a2 = Vec(doubled);
  for (double t : {0.0, 0.25, 0.7, 1.0}) {
    std::vector<double> lerp;
    for (size_t i = 0; i < doubled.size(); ++i) {
      lerp.push_back((1 - t) * a.ToFloats()[i] + t * doubled[i]);
    }
    ExpectClose(AsDoubles(SlerpMerge(a, a2, t)), lerp, 1e-7);
  }
  const Tensor zero = Vec(std::vector<float>(77, 0.0f));
  std::vector<double> half_a;
  for (float v : a.ToFloats()) half_a.push_back(0.5 * v);
  ExpectClose(AsDoubles(SlerpMerge(a, zero, 0.5)), half_a, 1e-7);
}

TEST(SlerpMergeTest, AgreesWithOracle) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> unit(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = testing::RandomFloats(rng, 1 + trial);
    const auto b = testing::RandomFloats(rng, 1 + trial);
    const double t = unit(rng);
    ExpectClose(AsDoubles(SlerpMerge(Vec(a), Vec(b), t)), oracle::Slerp(a, b, t));
  }
}

TEST(DareSparsifyTest, IdentityAndDeterminism) {
  std::mt19937_64 rng(11);
  const auto values = testing::RandomFloats(rng, 100);
  TaskVector tv = Tv(std::vector<double>(values.begin(), values.end()));
  EXPECT_EQ(DareSparsify(tv, 1.0, 3).delta, tv.delta);
  const auto a = DareSparsify(tv, 0.3, 42);
  EXPECT_EQ(DareSparsify(tv, 0.3, 42).delta, a.delta);
  EXPECT_NE(DareSparsify(tv, 0.3, 43).delta, a.delta);
  TaskVector other_source = tv;
  other_source.source_index = 1;
  EXPECT_NE(DareSparsify(other_source, 0.3, 42).delta, a.delta);
  for (size_t i = 0; i < a.delta.size(); ++i) {
    if (a.delta[i] != 0.0) {
      EXPECT_DOUBLE_EQ(a.delta[i], tv.delta[i] / 0.3);
    }
  }
}

TEST(DareSparsifyTest, PreservesDeltaInExpectation) {
  std::mt19937_64 rng(12);
  std::vector<double> delta(32);
  std::uniform_real_distribution<double> mag(0.5, 2.0);
  for (size_t i = 0; i < delta.size(); ++i) delta[i] = (i % 2 ? -1 : 1) * mag(rng);
  const TaskVector tv = Tv(delta);
  constexpr int kDraws = 10000;
  std::vector<double> sum(delta.size(), 0.0);
  for (int draw = 0; draw < kDraws; ++draw) {
    const auto sparse = DareSparsify(tv, 0.5, static_cast<uint64_t>(draw));
    for (size_t i = 0; i < sum.size(); ++i) sum[i] += sparse.delta[i];
  }
  for (size_t i = 0; i < sum.size(); ++i) {
    EXPECT_NEAR(sum[i] / kDraws, delta[i], 0.05 * std::fabs(delta[i])) << i;
  }
}

TEST(DareMergeTest, DensityOneMatchesUnderlyingMethod) {
  std::mt19937_64 rng(13);
  const Tensor base = Vec(testing::RandomFloats(rng, 48));
  const std::vector<Tensor> models = {Vec(testing::RandomFloats(rng, 48)),
                                      Vec(testing::RandomFloats(rng, 48))};
  const std::vector<double> weights = {0.6, 0.4};
  const std::vector<double> ones = {1.0, 1.0};
  EXPECT_EQ(DareMerge(base, models, weights, ones, 1, true, true, true).data,
            TiesMerge(base, models, weights, ones, true, true).data);

  // dare_linear at density 1 is base + sum w_m (model_m - base) / sum w.
  const auto got = AsDoubles(DareMerge(base, models, weights, ones, 1, false, true, false));
  const auto b = base.ToFloats();
  const auto m0 = models[0].ToFloats();
  const auto m1 = models[1].ToFloats();
  std::vector<double> want;
  for (size_t i = 0; i < b.size(); ++i) {
    want.push_back(b[i] + 0.6 * (double(m0[i]) - b[i]) + 0.4 * (double(m1[i]) - b[i]));
  }
  ExpectClose(got, want);
}

TEST(DareMergeTest, MaskWidthInvariance) {
  std::mt19937_64 rng(14);
  const Tensor base = Vec(testing::RandomFloats(rng, 64));
  const std::vector<Tensor> models = {Vec(testing::RandomFloats(rng, 64)),
                                      Vec(testing::RandomFloats(rng, 64))};
  const std::vector<double> weights = {0.5, 0.5};
  const std::vector<double> densities = {0.4, 0.6};
  EXPECT_EQ(DareMerge(base, models, weights, densities, 9, true, true, true).data,
            DareMerge(base, models, weights, densities, 9, true, true, false).data);
}

}  // namespace
}  // namespace mf
