// SPDX-License-Identifier: Apache-2.0

#include "ppldecode/eval_harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ppldecode/fixtures.hpp"
#include "test_util.hpp"

namespace ppldecode {
namespace {

constexpr TokenId kA = 0, kB = 1, kC = 2;

const PromptTemplate kSentiment{"Classify the sentiment.", {"positive", "negative"}};

TEST(InstantiatePromptTest, Layout) {
  EXPECT_EQ(instantiate_prompt(kSentiment, {"great movie", "positive"}),
            "great movie\nClassify the sentiment.\nChoices: positive, negative. Answer: ");
  EXPECT_EQ(choices_suffix({"X", "Y", "Z"}), "Choices: X, Y, Z. Answer: ");
}

TEST(InstantiatePromptTest, RejectsBadInputs) {
  EXPECT_THROW(instantiate_prompt({"p", {}}, {"x", "y"}), Error);
  EXPECT_THROW(instantiate_prompt({"p", {"only"}}, {"x", "only"}), Error);
  EXPECT_THROW(instantiate_prompt(kSentiment, {"", "positive"}), Error);
}

TEST(AvgPromptPerplexityTest, UniformModelGivesVocabularySize) {
  const TableLM uniform = table_lm_from_spec(
      {{"vocab", {"p", "q", "r", "s", "t", "u", "</s>", "<unk>"}},
       {"default_row",
        {{"p", .125}, {"q", .125}, {"r", .125}, {"s", .125}, {"t", .125}, {"u", .125},
         {"</s>", .125}, {"<unk>", .125}}}});
  WhitespaceTokenizer tok(uniform.vocabulary());
  const std::vector<LabeledExample> ex{{"great movie", "positive"}, {"dull", "negative"}};
  std::vector<std::string> warnings;
  EXPECT_NEAR(avg_prompt_perplexity(uniform, tok, kSentiment, ex, &warnings), 8.0, 1e-9);
  // every word is out of vocabulary
  EXPECT_EQ(warnings.size(), 2u);
}

/// Maps prompts starting with "lo" to [a] and everything else to [b].
class TwoWayTokenizer final : public Tokenizer {
 public:
  TokenSeq encode(std::string_view text) const override {
    return text.starts_with("lo") ? TokenSeq{kA} : TokenSeq{kB};
  }
  std::string decode(std::span<const TokenId>) const override { return ""; }
};

TEST(AvgPromptPerplexityTest, ArithmeticMeanOfPerplexities) {
  const TableLM lm = fixtures::unconditional({0.25, 0.0625, 0.6375, 0.05});
  TwoWayTokenizer tok;
  EXPECT_NEAR(avg_prompt_perplexity(lm, tok, kSentiment, {{"lo", "positive"}, {"hi", "positive"}}),
              10.0, 1e-9);
  EXPECT_THROW(avg_prompt_perplexity(lm, tok, kSentiment, {}), Error);
}

TEST(ClassifyTest, HighestMeanLogProbWins) {
  const TableLM lm = fixtures::unconditional({0.1, 0.6, 0.2, 0.1});
  EXPECT_EQ(classify(lm, TokenSeq{kC}, {{kA}, {kB}, {kC}}), 1u);
  // mean, not sum: [b b] ties [b] and loses to it on index
  EXPECT_EQ(classify(lm, TokenSeq{kC}, {{kB, kB}, {kB}}), 0u);
  // mean favours [a b] (-1.41 vs -1.61) where the sum would pick [c]
  EXPECT_EQ(classify(lm, TokenSeq{kC}, {{kA, kB}, {kC}}), 0u);
}

TEST(ClassifyTest, TiesGoToFirstLabel) {
  const TableLM lm = fixtures::hand_target();
  EXPECT_EQ(classify(lm, TokenSeq{}, {{kB}, {kB}}), 0u);
  const TableLM uniform = fixtures::unconditional({0.25, 0.25, 0.25, 0.25});
  EXPECT_EQ(classify(uniform, TokenSeq{kA}, {{kC}, {kA}, {kB}}), 0u);
  EXPECT_THROW(classify(uniform, TokenSeq{}, {{kA}}), Error);
  EXPECT_THROW(classify(uniform, TokenSeq{}, {{kA}, {}}), Error);
}

/// Words of the sentiment task; the model puts most mass on "positive"
/// when "good" appears anywhere in the context and on "negative" otherwise.
struct SentimentWorld {
  TableLM base = table_lm_from_spec(
      {{"vocab",
        {"good", "bad", "film", "plot", "Classify", "the", "sentiment.", "Choices:", "positive,",
         "negative.", "Answer:", "positive", "negative", "</s>"}},
       {"default_row",
        {{"good", .02}, {"bad", .02}, {"film", .02}, {"plot", .02}, {"Classify", .02},
         {"the", .02}, {"sentiment.", .02}, {"Choices:", .02}, {"positive,", .02},
         {"negative.", .02}, {"Answer:", .02}, {"positive", .38}, {"negative", .38},
         {"</s>", .02}}}});
  TokenId good = *base.vocabulary().find("good");
  TokenId pos = *base.vocabulary().find("positive");
  TokenId neg = *base.vocabulary().find("negative");
  testing::MappedLM model{base, [this](std::span<const TokenId> ctx, LogProbVector lp) {
                            const bool upbeat =
                                std::find(ctx.begin(), ctx.end(), good) != ctx.end();
                            lp[static_cast<std::size_t>(upbeat ? pos : neg)] = std::log(0.56);
                            lp[static_cast<std::size_t>(upbeat ? neg : pos)] = std::log(0.2);
                            return lp;
                          }};
  WhitespaceTokenizer tok{base.vocabulary()};
};

std::vector<LabeledExample> four_instances() {
  return {{"good film", "positive"},
          {"bad film", "negative"},
          {"good plot", "positive"},
          {"bad plot", "positive"}};
}

TEST(EvaluateTest, AccuracyOnFourInstances) {
  SentimentWorld w;
  const auto r = evaluate(w.model, w.tok, kSentiment, four_instances());
  EXPECT_EQ(r.n, 4u);
  EXPECT_EQ(r.correct, 3u);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  EXPECT_FALSE(r.rows[3].correct);
  EXPECT_EQ(r.rows[3].predicted, 1u);
  EXPECT_TRUE(std::isfinite(r.avg_perplexity));
}

TEST(EvaluateTest, FlippingOneInstanceMovesAccuracyByOneOverN) {
  SentimentWorld w;
  auto data = four_instances();
  const double before = evaluate(w.model, w.tok, kSentiment, data).accuracy;
  data[3].gold_label = "negative";
  const double after = evaluate(w.model, w.tok, kSentiment, data).accuracy;
  EXPECT_DOUBLE_EQ(after - before, 1.0 / 4.0);
}

TEST(EvaluateTest, WorkersDoNotChangeResults) {
  SentimentWorld w;
  std::vector<LabeledExample> data;
  for (int i = 0; i < 10; ++i) {
    const auto base = four_instances();
    data.insert(data.end(), base.begin(), base.end());
  }
  const auto seq = evaluate(w.model, w.tok, kSentiment, data, 1);
  const auto par = evaluate(w.model, w.tok, kSentiment, data, 4);
  EXPECT_EQ(std::bit_cast<std::uint64_t>(seq.avg_perplexity),
            std::bit_cast<std::uint64_t>(par.avg_perplexity));
  EXPECT_EQ(seq.correct, par.correct);
  EXPECT_EQ(report_csv_row(0, std::nullopt, "original", seq),
            report_csv_row(0, std::nullopt, "original", par));
}

TEST(EvaluateTest, UnknownGoldLabelIsError) {
  SentimentWorld w;
  EXPECT_THROW(evaluate(w.model, w.tok, kSentiment, {{"good film", "neutral"}}), Error);
  EXPECT_THROW(evaluate(w.model, w.tok, kSentiment, {}), Error);
}

TEST(EvaluateTest, WorkerErrorsPropagate) {
  SentimentWorld w;
  auto data = four_instances();
  data[2].gold_label = "neutral";
  EXPECT_THROW(evaluate(w.model, w.tok, kSentiment, data, 3), Error);
}

TEST(ScatterTest, IdenticalContextFreeModelsGiveEqualColumns) {
  const TableLM lm = fixtures::unconditional({0.5, 0.3, 0.1, 0.1});
  std::vector<TokenSeq> prompts{{kA}, {kB, kC}, {kC, kC, kA}};
  const auto ex = scatter_export(lm, lm, prompts, {3, {}});
  ASSERT_EQ(ex.rows.size(), 3u);
  for (const auto& row : ex.rows) EXPECT_NEAR(row.ppl_as_output, row.ppl_as_input, 1e-12);
}

TEST(ScatterTest, RandomPairsGiveFinitePositiveColumns) {
  std::mt19937_64 rng(7);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const TableLM para = random_table_lm(100 + s, 6, 2);
    const TableLM tar = random_table_lm(200 + s, 6, 2);
    std::vector<TokenSeq> prompts;
    for (int i = 0; i < 5; ++i) prompts.push_back(testing::random_seq(rng, 6, 3));
    const auto ex = scatter_export(para, tar, prompts, {4, {}});
    EXPECT_EQ(ex.rows.size() + ex.skipped.size(), prompts.size());
    for (const auto& row : ex.rows) {
      EXPECT_TRUE(std::isfinite(row.ppl_as_output) && row.ppl_as_output > 0);
      EXPECT_TRUE(std::isfinite(row.ppl_as_input) && row.ppl_as_input > 0);
    }
  }
}

TEST(ScatterTest, EmptyParaphrasesAreSkipped) {
  const TableLM para = fixtures::unconditional({0.1, 0.1, 0.1, 0.7});
  const auto ex = scatter_export(para, para, {{kA}, {kB}}, {3, {}});
  EXPECT_TRUE(ex.rows.empty());
  EXPECT_EQ(ex.skipped, (std::vector<std::size_t>{0, 1}));
}

TEST(ScatterTest, NoPromptsGiveHeaderOnly) {
  const TableLM lm = fixtures::hand_target();
  EXPECT_EQ(scatter_csv(scatter_export(lm, lm, {}, {3, {}})),
            std::string(kScatterHeader) + "\n");
}

TEST(SpearmanTest, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  // scipy.stats.spearmanr([1,2,3,4,5],[2,1,4,3,5]) = 0.8
  EXPECT_NEAR(spearman({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5}), 0.8, 1e-12);
  // with ties: spearmanr([1,2,2,3],[1,2,3,4]) = 0.9486832980505138
  EXPECT_NEAR(spearman({1, 2, 2, 3}, {1, 2, 3, 4}), 0.9486832980505138, 1e-12);
  EXPECT_TRUE(std::isnan(spearman({1}, {2})));
  EXPECT_TRUE(std::isnan(spearman({1, 1, 1}, {1, 2, 3})));
}

TEST(SweepAlphaTest, OneRowPerAlphaWithBoundaryModes) {
  const TableLM para = fixtures::hand_paraphrase();
  const TableLM tar = fixtures::hand_target();
  const TokenSeq ori{kC};
  const auto rows = sweep_alpha(para, tar, ori, {0.0, 0.5, 1.0}, {0.5, 3, {}});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(identical(rows[0].result, decode_greedy(para, tar, ori, {3, {}})));
  EXPECT_EQ(rows[1].result.tokens, (TokenSeq{kA, kB, kB}));
  EXPECT_FALSE(rows[0].similarity.has_value());
  EXPECT_THROW(sweep_alpha(para, tar, ori, {0.5, 1.5}, {}), Error);
}

TEST(SweepAlphaTest, TargetPerplexityFallsAcrossThreeRegimes) {
  const TableLM para = fixtures::unconditional({0.5, 0.05, 0.4, 0.05});
  const TableLM tar = fixtures::unconditional({0.05, 0.6, 0.3, 0.05});
  const auto rows = sweep_alpha(para, tar, TokenSeq{kC}, {0.0, 0.5, 1.0}, {0.0, 3, {}});
  EXPECT_EQ(rows[0].result.tokens, (TokenSeq{kA, kA, kA}));
  EXPECT_EQ(rows[1].result.tokens, (TokenSeq{kA, kC, kC}));
  EXPECT_EQ(rows[2].result.tokens, (TokenSeq{kA, kB, kB}));
  EXPECT_GT(rows[0].result.target_perplexity, rows[1].result.target_perplexity);
  EXPECT_GT(rows[1].result.target_perplexity, rows[2].result.target_perplexity);
}

TEST(SweepAlphaTest, SimilarityHookSeesReferenceAndCandidate) {
  const TableLM para = fixtures::hand_paraphrase();
  const TableLM tar = fixtures::hand_target();
  auto overlap = [](std::string_view ref, std::string_view cand) {
    return ref == cand ? 1.0 : 0.0;
  };
  const auto rows = sweep_alpha(para, tar, TokenSeq{kC}, {0.0, 0.5}, {0.5, 3, {}}, overlap,
                                "a b b");
  EXPECT_EQ(rows[0].similarity, 0.0);
  EXPECT_EQ(rows[1].similarity, 1.0);
  EXPECT_EQ(sweep_csv_row(4, rows[1]), "4,0.5,a b b,3.02853,max_len,1");
}

TEST(CsvTest, Formatting) {
  EXPECT_EQ(format_real(0.75), "0.75");
  EXPECT_EQ(format_real(1.0 / 3.0), "0.333333");
  EXPECT_EQ(format_real(1234567.0), "1.23457e+06");
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EvalReport r;
  r.accuracy = 0.75;
  r.avg_perplexity = 12.5;
  r.n = 4;
  EXPECT_EQ(report_csv_row(2, std::nullopt, "search", r), "2,,search,0.75,12.5,4");
  EXPECT_EQ(report_csv_row(2, 0.5, "ensemble", r), "2,0.5,ensemble,0.75,12.5,4");
}

class JsonlTest : public ::testing::Test {
 protected:
  std::filesystem::path dir_ = std::filesystem::temp_directory_path() /
                               ("ppldecode_jsonl_" + std::to_string(::getpid()));
  void SetUp() override { std::filesystem::create_directories(dir_); }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::string write(const std::string& name, const std::string& body) {
    const auto p = dir_ / name;
    std::ofstream(p) << body;
    return p.string();
  }
};

TEST_F(JsonlTest, ReadsDatasetAndTemplates) {
  const auto d = read_dataset(write("d.jsonl",
                                    "{\"input\": \"good film\", \"label\": \"positive\"}\n\n"
                                    "{\"input\": \"bad\", \"label\": \"negative\"}\n"));
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[1].input_text, "bad");
  const auto t = read_templates(
      write("t.jsonl", "{\"prompt\": \"Classify.\", \"choices\": [\"x\", \"y\"]}\n"));
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].label_choices, (std::vector<std::string>{"x", "y"}));
}

TEST_F(JsonlTest, ParseErrorsNameTheLine) {
  const auto path = write("bad.jsonl", "{\"input\": \"a\", \"label\": \"b\"}\n{oops\n");
  try {
    read_dataset(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos);
  }
  EXPECT_THROW(read_dataset(write("miss.jsonl", "{\"input\": \"a\"}\n")), Error);
  EXPECT_THROW(read_dataset((dir_ / "absent.jsonl").string()), Error);
}

}  // namespace
}  // namespace ppldecode
