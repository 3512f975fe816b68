#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ppldecode/error.hpp"
#include "ppldecode/language_model.hpp"
#include "ppldecode/tokenizer.hpp"

namespace ppldecode {

inline constexpr std::string_view kDefaultSystemPrompt =
    "Generate ONE paraphrase of the following sentence.";

inline constexpr std::string_view kEmptyOutputWarning =
    "empty paraphrase: EOS was selected before any content token";

enum class FinishReason { kEos, kMaxLen };

inline const char* to_string(FinishReason r) {
  return r == FinishReason::kEos ? "eos" : "max_len";
}

struct GenerationResult {
  TokenSeq tokens;  // content only, EOS stripped
  std::string text;
  // NaN when `tokens` is empty.
  double target_perplexity = std::numeric_limits<double>::quiet_NaN();
  double paraphrase_conditional_ppl = std::numeric_limits<double>::quiet_NaN();
  FinishReason finish_reason = FinishReason::kMaxLen;
  std::vector<std::string> warnings;
};

/// Field-by-field equality with doubles compared bitwise, so two empty
/// results (NaN perplexities) are identical.
inline bool identical(const GenerationResult& a, const GenerationResult& b) {
  auto same = [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  };
  return a.tokens == b.tokens && a.text == b.text &&
         same(a.target_perplexity, b.target_perplexity) &&
         same(a.paraphrase_conditional_ppl, b.paraphrase_conditional_ppl) &&
         a.finish_reason == b.finish_reason && a.warnings == b.warnings;
}

/// x_sys ∘ x_ori: the fixed conditioning prefix of the paraphrase model.
inline TokenSeq paraphrase_prefix(std::span<const TokenId> system_prompt,
                                  std::span<const TokenId> ori) {
  TokenSeq ctx(system_prompt.begin(), system_prompt.end());
  ctx.insert(ctx.end(), ori.begin(), ori.end());
  return ctx;
}

/// Fills text and both perplexities for a finished token sequence. The
/// target scores the paraphrase standalone; the paraphrase model scores it
/// conditioned on `para_prefix`.
inline GenerationResult finalize_result(const LanguageModel& para,
                                        const LanguageModel& tar,
                                        std::span<const TokenId> para_prefix,
                                        TokenSeq tokens, FinishReason reason,
                                        const Tokenizer* detokenizer = nullptr) {
  GenerationResult r;
  r.finish_reason = reason;
  if (detokenizer) {
    r.text = detokenizer->decode(tokens);
  } else {
    r.text = WhitespaceTokenizer(tar.vocabulary()).decode(tokens);
  }
  if (tokens.empty()) {
    r.warnings.emplace_back(kEmptyOutputWarning);
  } else {
    r.target_perplexity = perplexity(tar, tokens);
    r.paraphrase_conditional_ppl = perplexity(para, tokens, para_prefix);
  }
  r.tokens = std::move(tokens);
  return r;
}

struct GreedyConfig {
  int max_len = 64;
  TokenSeq system_prompt{};
};

inline void validate_inputs(const LanguageModel& para, const LanguageModel& tar,
                            std::span<const TokenId> ori, int max_len) {
  require_shared_vocabulary(para, tar);
  if (ori.empty()) fail(ErrorKind::kInvalidInput, "original prompt is empty");
  if (max_len < 1) fail(ErrorKind::kInvalidInput, "max_len must be >= 1");
  para.vocabulary().check(ori);
}

/// Unconstrained paraphrasing: argmax of P_para at every step.
inline GenerationResult decode_greedy(const LanguageModel& para,
                                      const LanguageModel& tar,
                                      std::span<const TokenId> ori,
                                      const GreedyConfig& cfg,
                                      const Tokenizer* detokenizer = nullptr) {
  validate_inputs(para, tar, ori, cfg.max_len);
  const TokenSeq prefix = paraphrase_prefix(cfg.system_prompt, ori);
  TokenSeq context = prefix;
  TokenSeq generated;
  FinishReason reason = FinishReason::kMaxLen;
  for (int step = 0; step < cfg.max_len; ++step) {
    const auto next = argmax(next_log_probs(para, context));
    if (!next) fail(ErrorKind::kDecodingStuck, "every paraphrase token has zero probability");
    if (*next == para.vocabulary().eos_id()) {
      reason = FinishReason::kEos;
      break;
    }
    generated.push_back(*next);
    context.push_back(*next);
  }
  return finalize_result(para, tar, prefix, std::move(generated), reason,
                         detokenizer);
}

}  // namespace ppldecode
