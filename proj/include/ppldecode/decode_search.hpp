#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * Search-based paraphrasing with one-token look-ahead.
 *
 * Each step expands every live candidate with the paraphrase model's top
 * `expand_width` next tokens, scores each extension by its perplexity under
 * the target model, and keeps the `k` lowest. Search stops once any
 * retained candidate has emitted EOS, or after `max_len` steps.
 *
 * Ordering everywhere is (perplexity ascending, token ids lexicographic,
 * incomplete before complete). Extensions the target assigns zero
 * probability are never retained.
 *
 * brute_force_reference() re-derives the same result without incremental
 * caching or partial sorting and is meant for oracle-scale inputs only.
 */

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "ppldecode/error.hpp"
#include "ppldecode/generation.hpp"
#include "ppldecode/language_model.hpp"

namespace ppldecode {

struct SearchConfig {
  int k = 3;
  std::optional<int> expand_width;  // defaults to k
  int max_len = 64;
  TokenSeq system_prompt{};

  int width() const { return expand_width.value_or(k); }

  void validate() const {
    if (k < 1) fail(ErrorKind::kInvalidInput, "k must be >= 1");
    if (width() < 1) fail(ErrorKind::kInvalidInput, "expand_width must be >= 1");
    if (max_len < 1) fail(ErrorKind::kInvalidInput, "max_len must be >= 1");
  }
};

struct Candidate {
  TokenSeq tokens;  // generated content, EOS never stored
  double target_logprob_sum = 0.0;
  std::size_t scored = 0;  // prefix of `tokens` covered by the cached sum
  bool complete = false;

  /// +inf for an empty sequence or a zero-probability one.
  double perplexity() const {
    if (tokens.empty()) return kPosInf;
    return perplexity_from_log_prob(target_logprob_sum, tokens.size());
  }

  bool selectable() const { return target_logprob_sum != kNegInf; }

  friend bool operator==(const Candidate& a, const Candidate& b) {
    return a.tokens == b.tokens && a.complete == b.complete;
  }
};

using Beam = std::vector<Candidate>;

inline bool rank_less(const Candidate& a, const Candidate& b) {
  const double pa = a.perplexity();
  const double pb = b.perplexity();
  if (pa != pb) return pa < pb;
  if (a.tokens != b.tokens) return a.tokens < b.tokens;
  return !a.complete && b.complete;
}

/// Appends each of the paraphrase model's top-`width` tokens to every
/// incomplete candidate. Complete candidates pass through. Duplicates keep
/// their first occurrence.
inline std::vector<Candidate> expand(const Beam& beam, const LanguageModel& para,
                                     std::span<const TokenId> ctx_prefix,
                                     int width) {
  if (beam.empty()) fail(ErrorKind::kInvalidInput, "cannot expand an empty beam");
  if (width < 1) fail(ErrorKind::kInvalidInput, "expand width must be >= 1");
  const TokenId eos = para.vocabulary().eos_id();
  std::vector<Candidate> out;
  auto push_unique = [&out](Candidate c) {
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(std::move(c));
  };
  for (const Candidate& cand : beam) {
    if (cand.complete) {
      push_unique(cand);
      continue;
    }
    TokenSeq ctx(ctx_prefix.begin(), ctx_prefix.end());
    ctx.insert(ctx.end(), cand.tokens.begin(), cand.tokens.end());
    const LogProbVector lp = next_log_probs(para, ctx);
    for (TokenId id : top_ids(lp, static_cast<std::size_t>(width))) {
      Candidate next = cand;
      if (id == eos) {
        next.complete = true;
      } else {
        next.tokens.push_back(id);
      }
      push_unique(std::move(next));
    }
  }
  return out;
}

/// Brings every cached target sum up to date, one target query per distinct
/// prefix, then keeps the `k` best by rank_less.
inline Beam select_topk(std::vector<Candidate> cands, const LanguageModel& tar,
                        int k) {
  std::map<TokenSeq, LogProbVector> cache;
  for (Candidate& c : cands) {
    while (c.scored < c.tokens.size()) {
      TokenSeq prefix(c.tokens.begin(),
                      c.tokens.begin() + static_cast<long>(c.scored));
      auto it = cache.find(prefix);
      if (it == cache.end()) {
        it = cache.emplace(prefix, next_log_probs(tar, prefix)).first;
      }
      c.target_logprob_sum += it->second[static_cast<std::size_t>(c.tokens[c.scored])];
      ++c.scored;
    }
  }
  std::erase_if(cands, [](const Candidate& c) { return !c.selectable(); });
  const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep),
                    cands.end(), rank_less);
  cands.resize(keep);
  return cands;
}

namespace detail {

/// Final pick: the best complete candidate with content if one exists,
/// otherwise the best member overall.
inline const Candidate& pick_final(const Beam& beam) {
  const Candidate* best_complete = nullptr;
  const Candidate* best = nullptr;
  for (const Candidate& c : beam) {
    if (!best || rank_less(c, *best)) best = &c;
    if (c.complete && !c.tokens.empty() &&
        (!best_complete || rank_less(c, *best_complete))) {
      best_complete = &c;
    }
  }
  return best_complete ? *best_complete : *best;
}

}  // namespace detail

/// Called after each step with the expanded set and the retained beam.
using SearchObserver =
    std::function<void(int step, const std::vector<Candidate>& expanded, const Beam& beam)>;

inline GenerationResult decode_search(const LanguageModel& para,
                                      const LanguageModel& tar,
                                      std::span<const TokenId> ori,
                                      const SearchConfig& cfg,
                                      const Tokenizer* detokenizer = nullptr,
                                      const SearchObserver& observer = {}) {
  cfg.validate();
  validate_inputs(para, tar, ori, cfg.max_len);
  const TokenSeq prefix = paraphrase_prefix(cfg.system_prompt, ori);

  Beam beam{Candidate{}};
  for (int step = 1; step <= cfg.max_len; ++step) {
    std::vector<Candidate> expanded = expand(beam, para, prefix, cfg.width());
    if (observer) {
      Beam next = select_topk(expanded, tar, cfg.k);
      observer(step, expanded, next);
      beam = std::move(next);
    } else {
      beam = select_topk(std::move(expanded), tar, cfg.k);
    }
    if (beam.empty()) {
      fail(ErrorKind::kDecodingStuck,
           "no candidate with non-zero target probability at step " +
               std::to_string(step));
    }
    if (std::any_of(beam.begin(), beam.end(),
                    [](const Candidate& c) { return c.complete; })) {
      break;
    }
  }
  const Candidate& best = detail::pick_final(beam);
  return finalize_result(para, tar, prefix, best.tokens,
                         best.complete ? FinishReason::kEos : FinishReason::kMaxLen,
                         detokenizer);
}

inline constexpr int kOracleMaxVocab = 8;
inline constexpr int kOracleMaxLen = 6;

/// Materializes the full expansion over V at each step, keeps members the
/// paraphrase model proposes, rescores every sequence from scratch, sorts
/// the whole set and truncates to k.
inline GenerationResult brute_force_reference(const LanguageModel& para,
                                              const LanguageModel& tar,
                                              std::span<const TokenId> ori,
                                              const SearchConfig& cfg,
                                              const Tokenizer* detokenizer = nullptr) {
  cfg.validate();
  const TokenId vocab_size = para.vocabulary().size();
  if (vocab_size > kOracleMaxVocab || cfg.max_len > kOracleMaxLen) {
    fail(ErrorKind::kOracleLimit, "brute-force reference limited to |V| <= " +
                                      std::to_string(kOracleMaxVocab) +
                                      " and max_len <= " +
                                      std::to_string(kOracleMaxLen));
  }
  validate_inputs(para, tar, ori, cfg.max_len);
  const TokenId eos = para.vocabulary().eos_id();
  const TokenSeq prefix = paraphrase_prefix(cfg.system_prompt, ori);

  struct Seq {
    TokenSeq tokens;
    bool complete = false;
    double log_prob = 0.0;
    double ppl = kPosInf;
  };
  auto ordered = [](const Seq& a, const Seq& b) {
    return std::tie(a.ppl, a.tokens, a.complete) < std::tie(b.ppl, b.tokens, b.complete);
  };

  std::vector<Seq> beam{Seq{}};
  for (int step = 1; step <= cfg.max_len; ++step) {
    std::vector<Seq> pool;
    for (const Seq& s : beam) {
      if (s.complete) {
        pool.push_back(s);
        continue;
      }
      TokenSeq ctx = prefix;
      ctx.insert(ctx.end(), s.tokens.begin(), s.tokens.end());
      const LogProbVector lp = next_log_probs(para, ctx);
      TokenSeq ranked;
      for (TokenId v = 0; v < vocab_size; ++v) {
        if (lp[static_cast<std::size_t>(v)] != kNegInf) ranked.push_back(v);
      }
      std::sort(ranked.begin(), ranked.end(), [&](TokenId a, TokenId b) {
        const double la = lp[static_cast<std::size_t>(a)];
        const double lb = lp[static_cast<std::size_t>(b)];
        return la != lb ? la > lb : a < b;
      });
      if (ranked.size() > static_cast<std::size_t>(cfg.width())) {
        ranked.resize(static_cast<std::size_t>(cfg.width()));
      }
      for (TokenId v = 0; v < vocab_size; ++v) {
        if (std::find(ranked.begin(), ranked.end(), v) == ranked.end()) continue;
        Seq next{s.tokens, v == eos, 0.0, kPosInf};
        if (v != eos) next.tokens.push_back(v);
        pool.push_back(std::move(next));
      }
    }

    std::vector<Seq> scored;
    for (Seq& s : pool) {
      const bool dup = std::any_of(scored.begin(), scored.end(), [&](const Seq& o) {
        return o.tokens == s.tokens && o.complete == s.complete;
      });
      if (dup) continue;
      if (!s.tokens.empty()) {
        s.log_prob = sequence_log_prob(tar, s.tokens);
        if (s.log_prob == kNegInf) continue;
        s.ppl = perplexity_from_log_prob(s.log_prob, s.tokens.size());
      }
      scored.push_back(std::move(s));
    }
    std::sort(scored.begin(), scored.end(), ordered);
    if (scored.size() > static_cast<std::size_t>(cfg.k)) {
      scored.resize(static_cast<std::size_t>(cfg.k));
    }
    beam = std::move(scored);
    if (beam.empty()) {
      fail(ErrorKind::kDecodingStuck,
           "no candidate with non-zero target probability at step " +
               std::to_string(step));
    }
    if (std::any_of(beam.begin(), beam.end(), [](const Seq& s) { return s.complete; })) {
      break;
    }
  }

  // beam is sorted, so the first qualifying member is the minimum.
  const Seq* chosen = &beam.front();
  for (const Seq& s : beam) {
    if (s.complete && !s.tokens.empty()) {
      chosen = &s;
      break;
    }
  }
  return finalize_result(para, tar, prefix, chosen->tokens,
                         chosen->complete ? FinishReason::kEos : FinishReason::kMaxLen,
                         detokenizer);
}

}  // namespace ppldecode
