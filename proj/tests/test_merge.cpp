#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "elchat/merge.hpp"
#include "support.hpp"

using namespace elchat;
namespace et = elchat::testing;

namespace {

std::vector<float> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Textbook slerp in long double, for comparison.
std::vector<double> slerp_oracle(const std::vector<float>& a, const std::vector<float>& b, double t) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  const long double c = std::clamp(dot / std::sqrt(na * nb), -1.0L, 1.0L);
  const long double w = std::acos(c);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = static_cast<double>((std::sin((1 - t) * w) * a[i] + std::sin(t * w) * b[i]) / std::sin(w));
  }
  return out;
}

}  // namespace

TEST(Slerp, EndpointsAreExact) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_vector(rng, 33), b = random_vector(rng, 33);
    EXPECT_EQ(slerp(a, b, 0.0), a);
    EXPECT_EQ(slerp(a, b, 1.0), b);
    EXPECT_EQ(linear(a, b, 0.0), a);
    EXPECT_EQ(linear(a, b, 1.0), b);
  }
}

TEST(Slerp, QuarterTurnMidpoint) {
  const std::vector<float> a{1, 0}, b{0, 1};
  SlerpInfo info;
  const auto m = slerp(a, b, 0.5, kDefaultParallelEps, &info);
  EXPECT_NEAR(m[0], std::sqrt(2.0) / 2, 1e-7);
  EXPECT_NEAR(m[1], std::sqrt(2.0) / 2, 1e-7);
  EXPECT_NEAR(info.omega, std::numbers::pi / 2, 1e-12);
  EXPECT_FALSE(info.fallback);
}

TEST(Slerp, IdenticalInputsAreFixedPoints) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_vector(rng, 64);
    for (double t : {0.1, 0.3, 0.5, 0.9}) {
      SlerpInfo info;
      EXPECT_EQ(slerp(a, a, t, kDefaultParallelEps, &info), a);
      EXPECT_TRUE(info.fallback);
    }
  }
}

TEST(Slerp, DegenerateInputsFallBackToLinear) {
  const std::vector<float> a{1, 2, 3}, neg{-1, -2, -3}, zero{0, 0, 0};
  SlerpInfo info;
  EXPECT_EQ(slerp(a, neg, 0.5, kDefaultParallelEps, &info), zero);
  EXPECT_TRUE(info.fallback);
  EXPECT_EQ(slerp(zero, a, 0.25, kDefaultParallelEps, &info), linear(zero, a, 0.25));
  EXPECT_TRUE(info.fallback);
}

TEST(Slerp, PreservesEqualNorms) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 30; ++i) {
    auto a = random_vector(rng, 128), b = random_vector(rng, 128);
    const double na = et::l2_norm(a), nb = et::l2_norm(b);
    for (auto& x : b) x = static_cast<float>(x * na / nb);
    for (int k = 0; k <= 10; ++k) {
      const auto m = slerp(a, b, k / 10.0);
      EXPECT_NEAR(et::l2_norm(m) / na, 1.0, 1e-5) << k;
    }
  }
}

TEST(Slerp, MatchesExtendedPrecisionFormula) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_vector(rng, 50), b = random_vector(rng, 50);
    for (double t : {0.2, 0.5, 0.7}) {
      const auto got = slerp(a, b, t);
      const auto want = slerp_oracle(a, b, t);
      for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(got[j], want[j], 1e-5 * (1 + std::abs(want[j])));
    }
  }
}

TEST(Linear, SymmetricInArguments) {
  std::mt19937_64 rng(5);
  const auto a = random_vector(rng, 40), b = random_vector(rng, 40);
  for (double t : {0.1, 0.5, 0.8}) {
    const auto x = linear(a, b, t), y = linear(b, a, 1 - t);
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(x[j], y[j], 1e-6);
  }
  const auto mid = linear(std::vector<float>{2, 4}, std::vector<float>{4, 8}, 0.5);
  EXPECT_EQ(mid, (std::vector<float>{3, 6}));
}

TEST(Slerp, RejectsBadInputs) {
  const std::vector<float> a{1, 2}, b{1, 2, 3}, nan{1, NAN};
  EXPECT_THROW(slerp(a, b, 0.5), ShapeError);
  EXPECT_THROW(slerp(a, a, 1.5), ValidationError);
  EXPECT_THROW(slerp(a, nan, 0.5), NumericError);
  EXPECT_THROW(linear(a, a, -0.1), ValidationError);
}

TEST(Schedule, ElchatDefaultOn32Layers) {
  const auto s = build_schedule(SchedulePreset::kElchatDefault, 32);
  const std::map<std::size_t, double> want{{0, 0.7}, {1, 0.5}, {30, 0.5}, {31, 0.7}};
  EXPECT_EQ(s.per_layer, want);
  EXPECT_EQ(s.alpha_for_layer(15), 0.5);
  EXPECT_EQ(s.method, MergeMethod::kSlerp);
}

TEST(Schedule, SmallModelsOuterWins) {
  EXPECT_EQ(build_schedule(SchedulePreset::kElchatDefault, 1).per_layer, (std::map<std::size_t, double>{{0, 0.7}}));
  EXPECT_EQ(build_schedule(SchedulePreset::kElchatDefault, 2).per_layer,
            (std::map<std::size_t, double>{{0, 0.7}, {1, 0.7}}));
  EXPECT_EQ(build_schedule(SchedulePreset::kElchatDefault, 3).per_layer,
            (std::map<std::size_t, double>{{0, 0.7}, {1, 0.5}, {2, 0.7}}));
}

TEST(Schedule, QwenAndUniform) {
  const auto q = build_schedule(SchedulePreset::kQwen3, 28);
  ASSERT_EQ(q.per_layer.size(), 28u);
  for (const auto& [_, a] : q.per_layer) EXPECT_EQ(a, 0.9);
  const auto u = build_schedule(SchedulePreset::kUniform, 4, 0.25);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(u.alpha_for_layer(l), 0.25);
  EXPECT_THROW(build_schedule(SchedulePreset::kUniform, 4, 1.25), ValidationError);
  EXPECT_THROW(build_schedule(SchedulePreset::kQwen3, 0), ValidationError);
  EXPECT_THROW(parse_preset("ties"), ValidationError);
  EXPECT_THROW(parse_method("dare"), ValidationError);
}

TEST(Schedule, ReportUsesStringLayerKeys) {
  const auto j = schedule_to_json(build_schedule(SchedulePreset::kElchatDefault, 32));
  EXPECT_EQ(j["per_layer"]["31"], 0.7);
  EXPECT_EQ(j["per_layer"].size(), 4u);
}

class MergeArchives : public ::testing::TestWithParam<DType> {};

TEST_P(MergeArchives, EveryTensorFollowsTheSchedule) {
  et::ToyModel ms, mt;
  ms.layers = mt.layers = 4;
  ms.dtype = mt.dtype = GetParam();
  ms.seed = 10;
  mt.seed = 20;
  const auto src = et::toy_weights(ms);
  auto tgt = et::toy_weights(mt);
  tgt.put(src.at("model.norm.weight"));  // one byte-identical pair
  const auto schedule = build_schedule(SchedulePreset::kElchatDefault, 4);
  const auto r = merge_archives(src, tgt, schedule);
  const LayerPattern pattern;

  ASSERT_EQ(r.archive.names(), tgt.names());
  for (const auto& rec : r.records) {
    const auto& out = r.archive.at(rec.name);
    const auto& t = tgt.at(rec.name);
    ASSERT_EQ(out.dtype, t.dtype);
    ASSERT_EQ(out.shape, t.shape);
    if (rec.name == kDefaultEmbeddingName || rec.name == kDefaultHeadName) {
      EXPECT_EQ(rec.action, "excluded");
      EXPECT_EQ(out.data, t.data);
      continue;
    }
    const auto layer = pattern.layer_of(rec.name);
    const double alpha = layer ? schedule.alpha_for_layer(*layer) : schedule.non_layer_alpha;
    EXPECT_EQ(rec.alpha, alpha);
    if (rec.name == "model.norm.weight") {
      EXPECT_EQ(rec.action, "identical");
      EXPECT_EQ(out.data, t.data);
      continue;
    }
    EXPECT_EQ(rec.action, "merged");
    const auto want = slerp_oracle(src.at(rec.name).to_f32(), t.to_f32(), alpha);
    const auto got = out.to_f32();
    const double tol = GetParam() == DType::kF32 ? 1e-5 : GetParam() == DType::kF16 ? 2e-3 : 1e-2;
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], tol * (1 + std::abs(want[i])));
  }
}

INSTANTIATE_TEST_SUITE_P(DTypes, MergeArchives, ::testing::Values(DType::kF32, DType::kF16, DType::kBF16));

TEST(MergeArchivesErrors, MissingAndMismatchedTensors) {
  et::ToyModel m;
  const auto src = et::toy_weights(m);
  const auto s = build_schedule(SchedulePreset::kElchatDefault, 2);
  auto extra = src;
  extra.insert(Tensor{"extra", DType::kF32, {1}, std::vector<std::uint8_t>(4)});
  EXPECT_THROW(merge_archives(src, extra, s), NameError);
  EXPECT_THROW(merge_archives(extra, src, s), NameError);
  auto reshaped = src;
  reshaped.put(Tensor{"model.norm.weight", DType::kF32, {4, 2}, std::vector<std::uint8_t>(32)});
  try {
    merge_archives(src, reshaped, s);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("model.norm.weight"), std::string::npos);
  }
}

TEST(MergeArchivesErrors, OutputDtypeCastsEverything) {
  et::ToyModel a, b;
  b.seed = 2;
  const auto r = merge_archives(et::toy_weights(a), et::toy_weights(b), build_schedule(SchedulePreset::kQwen3, 2),
                                DType::kBF16);
  for (const auto& [_, t] : r.archive.entries()) EXPECT_EQ(t.dtype, DType::kBF16);
}

TEST(MergeArchivesErrors, LinearMidpoint) {
  et::ToyModel a, b;
  b.seed = 2;
  const auto src = et::toy_weights(a), tgt = et::toy_weights(b);
  auto s = build_schedule(SchedulePreset::kUniform, 2, 0.5);
  s.method = MergeMethod::kLinear;
  const auto r = merge_archives(src, tgt, s);
  const auto x = src.at("model.norm.weight").to_f32(), y = tgt.at("model.norm.weight").to_f32();
  const auto got = r.archive.at("model.norm.weight").to_f32();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_FLOAT_EQ(got[i], (x[i] + y[i]) / 2);
}

TEST(ChatVector, EqualChatAndBaseLeaveAdaptedUntouched) {
  for (auto dtype : {DType::kF32, DType::kBF16}) {
    et::ToyModel base, adapted;
    base.dtype = adapted.dtype = dtype;
    adapted.vocab = base.vocab + 5;
    adapted.seed = 9;
    const auto b = et::toy_weights(base);
    const auto a = et::toy_weights(adapted);
    const auto out = chat_vector_apply(b, b, a);
    EXPECT_EQ(out, a);
  }
}

TEST(ChatVector, AddsDifferenceOnlyInsideBaseBlock) {
  et::ToyModel base, chat, adapted;
  chat.seed = 2;
  adapted.seed = 3;
  adapted.vocab = base.vocab + 4;
  adapted.hidden_major_head = base.hidden_major_head = chat.hidden_major_head = true;
  const auto b = et::toy_weights(base), c = et::toy_weights(chat), a = et::toy_weights(adapted);
  const auto out = chat_vector_apply(b, c, a, 0.5);

  const auto& head = out.at(kDefaultHeadName);  // [H, V + 4]
  const auto V = base.vocab, H = base.hidden, Va = adapted.vocab;
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t v = 0; v < Va; ++v) {
      const auto i = h * Va + v;
      if (v >= V) {
        EXPECT_EQ(head.get(i), a.at(kDefaultHeadName).get(i));
        continue;
      }
      const double d = 0.5 * (static_cast<double>(c.at(kDefaultHeadName).get(h * V + v)) - b.at(kDefaultHeadName).get(h * V + v));
      EXPECT_EQ(head.get(i), static_cast<float>(a.at(kDefaultHeadName).get(i) + d));
    }
  }
  const auto& emb = out.at(kDefaultEmbeddingName);
  const auto& aemb = a.at(kDefaultEmbeddingName);
  for (std::size_t i = V * H; i < Va * H; ++i) EXPECT_EQ(emb.get(i), aemb.get(i));
}

TEST(ChatVector, NameAndShapeChecks) {
  et::ToyModel m;
  const auto b = et::toy_weights(m);
  auto extra = b;
  extra.insert(Tensor{"x", DType::kF32, {1}, std::vector<std::uint8_t>(4)});
  EXPECT_THROW(chat_vector_apply(b, extra, b), NameError);
  EXPECT_THROW(chat_vector_apply(extra, extra, b), NameError);
  EXPECT_EQ(chat_vector_apply(b, b, extra).at("x"), extra.at("x"));
  EXPECT_THROW(chat_vector_apply(b, b, b, INFINITY), NumericError);
  et::ToyModel small = m;
  small.vocab = m.vocab - 1;
  EXPECT_THROW(chat_vector_apply(b, b, et::toy_weights(small)), ShapeError);
}
