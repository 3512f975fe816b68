#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * Ensemble-greedy paraphrasing.
 *
 * The first token is the paraphrase model's argmax given x_sys ∘ x_ori.
 * Every later token maximizes
 *
 *   alpha * log P_tar(x | x_gen) + (1 - alpha) * log P_para(x | x_sys ∘ x_ori ∘ x_gen)
 *
 * The target model sees only the generated tokens: it scores the paraphrase
 * as a standalone prompt. Ties go to the lowest token id.
 */

#include <span>
#include <vector>

#include "ppldecode/error.hpp"
#include "ppldecode/generation.hpp"
#include "ppldecode/language_model.hpp"

namespace ppldecode {

struct EnsembleConfig {
  double alpha = 0.5;
  int max_len = 64;
  TokenSeq system_prompt{};

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      fail(ErrorKind::kInvalidInput, "alpha must lie in [0, 1]");
    }
    if (max_len < 1) fail(ErrorKind::kInvalidInput, "max_len must be >= 1");
  }
};

struct StepScore {
  double target_log_prob;
  double paraphrase_log_prob;
};

/// Evolving decoder record. The paraphrase context is x_sys ∘ x_ori ∘ x_gen;
/// the target context is x_gen alone.
class GenerationState {
 public:
  explicit GenerationState(TokenSeq para_prefix)
      : prefix_len_(para_prefix.size()), context_para_(std::move(para_prefix)) {}

  const TokenSeq& context_para() const { return context_para_; }
  const TokenSeq& context_tar() const { return generated_; }
  const TokenSeq& generated() const { return generated_; }
  std::span<const TokenId> para_prefix() const {
    return std::span<const TokenId>(context_para_).first(prefix_len_);
  }
  const std::vector<StepScore>& per_step_scores() const { return scores_; }

  void append(TokenId id, StepScore score) {
    context_para_.push_back(id);
    generated_.push_back(id);
    scores_.push_back(score);
  }

 private:
  std::size_t prefix_len_;
  TokenSeq context_para_;
  TokenSeq generated_;
  std::vector<StepScore> scores_;
};

/// alpha * lp_tar + (1 - alpha) * lp_para. A zero weight drops its term
/// entirely, so -inf only propagates from an input that carries weight.
inline std::vector<double> combined_score(double alpha,
                                          std::span<const double> lp_tar,
                                          std::span<const double> lp_para) {
  if (lp_tar.size() != lp_para.size()) {
    fail(ErrorKind::kInvalidInput, "score vectors differ in length");
  }
  const double wt = alpha;
  const double wp = 1.0 - alpha;
  std::vector<double> out(lp_tar.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = wt == 0.0 ? 0.0 : wt * lp_tar[i];
    const double p = wp == 0.0 ? 0.0 : wp * lp_para[i];
    out[i] = t + p;
  }
  return out;
}

namespace detail {

struct EnsembleRun {
  GenerationState state;
  FinishReason reason;
};

inline EnsembleRun run_ensemble(const LanguageModel& para,
                                const LanguageModel& tar,
                                std::span<const TokenId> ori,
                                const EnsembleConfig& cfg) {
  cfg.validate();
  validate_inputs(para, tar, ori, cfg.max_len);
  const TokenId eos = para.vocabulary().eos_id();

  GenerationState state(paraphrase_prefix(cfg.system_prompt, ori));
  for (int step = 0; step < cfg.max_len; ++step) {
    const LogProbVector lp_para = next_log_probs(para, state.context_para());
    const LogProbVector lp_tar = next_log_probs(tar, state.context_tar());
    const auto next = step == 0
                          ? argmax(lp_para)
                          : argmax(combined_score(cfg.alpha, lp_tar, lp_para));
    if (!next) {
      fail(ErrorKind::kDecodingStuck,
           "every candidate scored -inf at step " + std::to_string(step + 1));
    }
    if (*next == eos) return {std::move(state), FinishReason::kEos};
    const auto i = static_cast<std::size_t>(*next);
    state.append(*next, {lp_tar[i], lp_para[i]});
  }
  return {std::move(state), FinishReason::kMaxLen};
}

}  // namespace detail

inline GenerationResult decode_ensemble(const LanguageModel& para,
                                        const LanguageModel& tar,
                                        std::span<const TokenId> ori,
                                        const EnsembleConfig& cfg,
                                        const Tokenizer* detokenizer = nullptr) {
  auto run = detail::run_ensemble(para, tar, ori, cfg);
  const TokenSeq prefix(run.state.para_prefix().begin(),
                        run.state.para_prefix().end());
  return finalize_result(para, tar, prefix, run.state.generated(), run.reason,
                         detokenizer);
}

/// Same as decode_ensemble but also returns the per-step scores.
inline GenerationState trace_ensemble(const LanguageModel& para,
                                      const LanguageModel& tar,
                                      std::span<const TokenId> ori,
                                      const EnsembleConfig& cfg) {
  return detail::run_ensemble(para, tar, ori, cfg).state;
}

}  // namespace ppldecode
