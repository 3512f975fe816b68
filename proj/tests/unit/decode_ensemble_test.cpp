// SPDX-License-Identifier: Apache-2.0

#include "ppldecode/decode_ensemble.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ppldecode/fixtures.hpp"
#include "test_util.hpp"

namespace ppldecode {
namespace {

constexpr TokenId kA = 0, kB = 1, kC = 2;

TEST(CombinedScoreTest, ZeroAlphaIsParaphraseOnly) {
  const std::vector<double> tar{kNegInf, std::log(0.6), std::log(0.4)};
  const std::vector<double> para{std::log(0.2), std::log(0.3), std::log(0.5)};
  EXPECT_EQ(combined_score(0.0, tar, para), para);
  EXPECT_EQ(combined_score(1.0, tar, para), tar);
}

TEST(CombinedScoreTest, HandWeightedValue) {
  const std::vector<double> tar{std::log(0.1), std::log(0.6)};
  const std::vector<double> para{std::log(0.5), std::log(0.3)};
  const auto s = combined_score(0.5, tar, para);
  EXPECT_NEAR(s[1], -0.8573992140459634, 1e-12);
  EXPECT_NEAR(s[0], -1.4978661367769954, 1e-12);
}

TEST(CombinedScoreTest, NegInfWithWeightPropagates) {
  const std::vector<double> tar{kNegInf, -1.0};
  const std::vector<double> para{-1.0, kNegInf};
  const auto s = combined_score(0.3, tar, para);
  EXPECT_EQ(s[0], kNegInf);
  EXPECT_EQ(s[1], kNegInf);
}

TEST(CombinedScoreTest, LengthMismatch) {
  const std::vector<double> a{-1.0};
  const std::vector<double> b{-1.0, -2.0};
  EXPECT_THROW(combined_score(0.5, a, b), Error);
}

TEST(CombinedScoreTest, ConstantShiftKeepsArgmax) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(-3.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> tar(9), para(9);
    for (auto& v : tar) v = g(rng);
    for (auto& v : para) v = g(rng);
    const double alpha = unit(rng);
    const double c = 10.0 * g(rng);
    const auto base = combined_score(alpha, tar, para);
    auto tar_shift = tar;
    for (auto& v : tar_shift) v += c;
    auto para_shift = para;
    for (auto& v : para_shift) v += c;
    const auto both = combined_score(alpha, tar_shift, para_shift);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(both[i], base[i] + c, 1e-9);
    EXPECT_EQ(argmax(combined_score(alpha, tar_shift, para)), argmax(base));
    EXPECT_EQ(argmax(combined_score(alpha, tar, para_shift)), argmax(base));
  }
}

TEST(DecodeEnsembleTest, HandFixtureHalfAlpha) {
  const TableLM para = fixtures::hand_paraphrase();
  const TableLM tar = fixtures::hand_target();
  const TokenSeq ori{kC};
  const auto r = decode_ensemble(para, tar, ori, {0.5, 3, {}});
  EXPECT_EQ(r.tokens, (TokenSeq{kA, kB, kB}));
  EXPECT_EQ(r.text, "a b b");
  EXPECT_EQ(r.finish_reason, FinishReason::kMaxLen);
  EXPECT_DOUBLE_EQ(r.target_perplexity, perplexity(tar, r.tokens));
  EXPECT_NEAR(r.target_perplexity, std::cbrt(1.0 / (0.1 * 0.6 * 0.6)), 1e-12);
}

TEST(DecodeEnsembleTest, HandFixtureBoundaryAlphas) {
  const TableLM para = fixtures::hand_paraphrase();
  const TableLM tar = fixtures::hand_target();
  const TokenSeq ori{kC};
  EXPECT_EQ(decode_ensemble(para, tar, ori, {1.0, 3, {}}).tokens, (TokenSeq{kA, kB, kB}));
  EXPECT_EQ(decode_ensemble(para, tar, ori, {0.0, 3, {}}).tokens, (TokenSeq{kA, kA, kA}));
}

TEST(DecodeEnsembleTest, StopsAtEosAndStripsIt) {
  const TableLM para = fixtures::hand_paraphrase();
  const TableLM tar = fixtures::unconditional({0.1, 0.1, 0.1, 0.7});
  const auto r = decode_ensemble(para, tar, TokenSeq{kA}, {1.0, 10, {}});
  EXPECT_EQ(r.tokens, (TokenSeq{kA}));
  EXPECT_EQ(r.finish_reason, FinishReason::kEos);
}

TEST(DecodeEnsembleTest, EosFirstGivesEmptyResultWithWarning) {
  const TableLM para = fixtures::unconditional({0.1, 0.1, 0.1, 0.7});
  const TableLM tar = fixtures::hand_target();
  const auto r = decode_ensemble(para, tar, TokenSeq{kA}, {0.5, 10, {}});
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_EQ(r.finish_reason, FinishReason::kEos);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_TRUE(std::isnan(r.target_perplexity));
}

TEST(DecodeEnsembleTest, AllNegInfIsStuck) {
  const TableLM para = fixtures::unconditional({1.0, 0.0, 0.0, 0.0});
  const TableLM tar = fixtures::unconditional({0.0, 1.0, 0.0, 0.0});
  try {
    decode_ensemble(para, tar, TokenSeq{kA}, {0.5, 5, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDecodingStuck);
  }
}

TEST(DecodeEnsembleTest, ConfigAndInputErrors) {
  const TableLM para = fixtures::hand_paraphrase();
  const TableLM tar = fixtures::hand_target();
  testing::UniformLM other(5);
  auto kind = [](const std::function<void()>& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kIo;
  };
  EXPECT_EQ(kind([&] { decode_ensemble(para, other, TokenSeq{0}, {}); }),
            ErrorKind::kConfiguration);
  EXPECT_EQ(kind([&] { decode_ensemble(para, tar, TokenSeq{}, {}); }),
            ErrorKind::kInvalidInput);
  EXPECT_EQ(kind([&] { decode_ensemble(para, tar, TokenSeq{0}, {1.5, 3, {}}); }),
            ErrorKind::kInvalidInput);
  EXPECT_EQ(kind([&] { decode_ensemble(para, tar, TokenSeq{0}, {0.5, 0, {}}); }),
            ErrorKind::kInvalidInput);
}

TEST(DecodeEnsembleTest, TargetConditionsOnGeneratedTokensOnly) {
  // Only a target that also saw x_ori would match the "b a" row.
  nlohmann::json tar_spec = {{"vocab", {"a", "b", "c", "eos"}},
                             {"eos", "eos"},
                             {"order", 2},
                             {"rows",
                              {{"a", {{"c", 0.9}, {"a", 0.1}}},
                               {"b a", {{"b", 0.9}, {"a", 0.1}}},
                               {"c", {{"c", 0.9}, {"a", 0.1}}},
                               {"b", {{"b", 0.9}, {"a", 0.1}}}}},
                             {"default_row", {{"a", 1.0}}}};
  const TableLM tar = table_lm_from_spec(tar_spec);
  const TableLM para = fixtures::unconditional({0.4, 0.3, 0.3, 0.0});
  // ori ends with b; if the target saw x_ori it would favour b.
  const auto r = decode_ensemble(para, tar, TokenSeq{kB}, {0.9, 3, {}});
  EXPECT_EQ(r.tokens, (TokenSeq{kA, kC, kC}));
}

TEST(GenerationStateTest, InvariantsHold) {
  const TableLM para = random_table_lm(21, 6, 2);
  const TableLM tar = random_table_lm(22, 6, 2);
  const TokenSeq sys{4, 4};
  const TokenSeq ori{1, 2, 3};
  const GenerationState st = trace_ensemble(para, tar, ori, {0.4, 6, sys});
  EXPECT_EQ(st.context_tar(), st.generated());
  EXPECT_EQ(st.per_step_scores().size(), st.generated().size());
  TokenSeq expect{4, 4, 1, 2, 3};
  expect.insert(expect.end(), st.generated().begin(), st.generated().end());
  EXPECT_EQ(st.context_para(), expect);
  double tar_sum = 0.0;
  for (const auto& s : st.per_step_scores()) tar_sum += s.target_log_prob;
  if (!st.generated().empty()) {
    EXPECT_NEAR(tar_sum, sequence_log_prob(tar, st.generated()), 1e-12);
  }
}

class EnsembleProperty : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(EnsembleProperty, BoundaryEquivalencesAndDeterminism) {
  const std::uint64_t seed = GetParam();
  const TableLM para = random_table_lm(2 * seed, 6, 2);
  const TableLM tar = random_table_lm(2 * seed + 1, 6, 2);
  std::mt19937_64 rng(seed);
  const TokenSeq ori = testing::random_seq(rng, 6, 3);
  const int max_len = 5;

  const auto greedy = decode_greedy(para, tar, ori, {max_len, {}});
  const auto zero = decode_ensemble(para, tar, ori, {0.0, max_len, {}});
  EXPECT_TRUE(identical(zero, greedy));

  const auto one = decode_ensemble(para, tar, ori, {1.0, max_len, {}});
  for (std::size_t i = 1; i < one.tokens.size(); ++i) {
    const TokenSeq prefix(one.tokens.begin(), one.tokens.begin() + static_cast<long>(i));
    EXPECT_EQ(argmax(next_log_probs(tar, prefix)), one.tokens[i]);
  }

  for (double alpha : {0.2, 0.5, 0.7}) {
    const auto a = decode_ensemble(para, tar, ori, {alpha, max_len, {}});
    const auto b = decode_ensemble(para, tar, ori, {alpha, max_len, {}});
    EXPECT_TRUE(identical(a, b));
    EXPECT_LE(a.tokens.size(), static_cast<std::size_t>(max_len));
    if (a.finish_reason == FinishReason::kMaxLen) {
      EXPECT_EQ(a.tokens.size(), static_cast<std::size_t>(max_len));
    } else {
      EXPECT_LT(a.tokens.size(), static_cast<std::size_t>(max_len));
    }
  }
}

TEST_P(EnsembleProperty, PerStepShiftOfEitherModelKeepsTokens) {
  const std::uint64_t seed = GetParam();
  const TableLM para = random_table_lm(100 + seed, 6, 2);
  const TableLM tar = random_table_lm(200 + seed, 6, 2);
  auto shift = [](std::span<const TokenId> ctx, LogProbVector lp) {
    const double c = -0.37 * static_cast<double>(ctx.size() + 1);
    for (auto& v : lp) v += c;
    return lp;
  };
  testing::MappedLM para_shift(para, shift);
  testing::MappedLM tar_shift(tar, shift);
  const TokenSeq ori{0, 1};
  const EnsembleConfig cfg{0.5, 5, {}};
  const auto base = decode_ensemble(para, tar, ori, cfg);
  EXPECT_EQ(decode_ensemble(para_shift, tar, ori, cfg).tokens, base.tokens);
  EXPECT_EQ(decode_ensemble(para, tar_shift, ori, cfg).tokens, base.tokens);
}

INSTANTIATE_TEST_SUITE_P(Seeds, EnsembleProperty, ::testing::Range<std::uint64_t>(0, 25));

}  // namespace
}  // namespace ppldecode
