#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * Language-model contract shared by every decoder.
 *
 * A model answers one question: given a context of token ids, what is the
 * normalized next-token distribution (natural log, double precision) over
 * its vocabulary. Empty context means "sequence start"; models that declare
 * a BOS id condition on it implicitly, so callers never pass BOS themselves.
 *
 * Queries are const and must be reentrant: evaluation workers share models
 * across threads.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppldecode/error.hpp"
#include "ppldecode/vocabulary.hpp"

namespace ppldecode {

using LogProbVector = std::vector<double>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

inline constexpr double kLocalNormTolerance = 1e-6;
inline constexpr double kRemoteNormTolerance = 1e-3;

enum class ModelRole { kParaphrase, kTarget };

inline const char* to_string(ModelRole role) {
  return role == ModelRole::kParaphrase ? "paraphrase" : "target";
}

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const Vocabulary& vocabulary() const = 0;

  /// Context ids are already range-checked by next_log_probs().
  virtual LogProbVector query(std::span<const TokenId> context) const = 0;
};

inline double log_sum_exp(std::span<const double> values) {
  double hi = kNegInf;
  for (double v : values) hi = std::max(hi, v);
  if (hi == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

/// Empty string when `lp` satisfies every distribution invariant at `tol`;
/// otherwise a description of the first failed check.
inline std::string check_distribution(std::span<const double> lp,
                                      std::size_t vocab_size, double tol) {
  if (lp.size() != vocab_size) {
    return "length " + std::to_string(lp.size()) + " != vocab size " +
           std::to_string(vocab_size);
  }
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (std::isnan(lp[i]) || lp[i] > 0.0) {
      return "value at id " + std::to_string(i) + " is not a log-probability";
    }
  }
  const double lse = log_sum_exp(lp);
  if (!(std::abs(lse) <= tol)) {
    return "normalization: log-sum-exp " + std::to_string(lse) +
           " exceeds tolerance " + std::to_string(tol);
  }
  return {};
}

inline LogProbVector next_log_probs(const LanguageModel& model,
                                    std::span<const TokenId> context) {
  model.vocabulary().check(context);
  return model.query(context);
}

/// Σ log P(seq_i | context ∘ seq_<i); -inf as soon as any step is impossible.
inline double sequence_log_prob(const LanguageModel& model,
                                std::span<const TokenId> seq,
                                std::span<const TokenId> context = {}) {
  if (seq.empty()) fail(ErrorKind::kInvalidInput, "empty sequence");
  model.vocabulary().check(seq);
  TokenSeq prefix(context.begin(), context.end());
  prefix.reserve(context.size() + seq.size());
  double total = 0.0;
  for (TokenId id : seq) {
    const LogProbVector lp = next_log_probs(model, prefix);
    total += lp[static_cast<std::size_t>(id)];
    if (total == kNegInf) return kNegInf;
    prefix.push_back(id);
  }
  return total;
}

inline double perplexity_from_log_prob(double log_prob_sum, std::size_t m) {
  if (m == 0) fail(ErrorKind::kInvalidInput, "perplexity of zero tokens");
  if (log_prob_sum == kNegInf) return kPosInf;
  return std::exp(-log_prob_sum / static_cast<double>(m));
}

/// Content tokens of `seq`: drops one trailing EOS, rejects interior EOS.
inline std::span<const TokenId> content_tokens(const Vocabulary& vocab,
                                               std::span<const TokenId> seq) {
  if (!seq.empty() && seq.back() == vocab.eos_id()) {
    seq = seq.first(seq.size() - 1);
  }
  if (std::find(seq.begin(), seq.end(), vocab.eos_id()) != seq.end()) {
    fail(ErrorKind::kInvalidInput, "EOS before the end of the sequence");
  }
  return seq;
}

/// Geometric-mean inverse probability over content tokens given `context`.
/// A trailing EOS is excluded from both the product and the length.
inline double perplexity(const LanguageModel& model,
                         std::span<const TokenId> seq,
                         std::span<const TokenId> context = {}) {
  if (seq.empty()) fail(ErrorKind::kInvalidInput, "empty sequence");
  const auto content = content_tokens(model.vocabulary(), seq);
  if (content.empty()) {
    fail(ErrorKind::kInvalidInput, "sequence holds only EOS");
  }
  return perplexity_from_log_prob(sequence_log_prob(model, content, context),
                                  content.size());
}

/// Index of the largest finite-or-not value; lowest index wins ties and
/// -inf is never selected. nullopt when every entry is -inf.
inline std::optional<TokenId> argmax(std::span<const double> scores) {
  std::optional<TokenId> best;
  double best_score = kNegInf;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > best_score) {
      best_score = scores[i];
      best = static_cast<TokenId>(i);
    }
  }
  return best;
}

/// Top `n` ids by score (descending, lower id first on ties), skipping -inf.
inline TokenSeq top_ids(std::span<const double> scores, std::size_t n) {
  TokenSeq ids;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] != kNegInf) ids.push_back(static_cast<TokenId>(i));
  }
  const std::size_t keep = std::min(n, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<long>(keep),
                    ids.end(), [&](TokenId a, TokenId b) {
                      const double sa = scores[static_cast<std::size_t>(a)];
                      const double sb = scores[static_cast<std::size_t>(b)];
                      return sa != sb ? sa > sb : a < b;
                    });
  ids.resize(keep);
  return ids;
}

/// Both roles must report the same vocabulary digest before ensembling.
inline void require_shared_vocabulary(const LanguageModel& para,
                                      const LanguageModel& tar) {
  const Vocabulary& pv = para.vocabulary();
  const Vocabulary& tv = tar.vocabulary();
  if (pv.hash() != tv.hash() || pv.eos_id() != tv.eos_id()) {
    fail(ErrorKind::kConfiguration,
         "paraphrase and target vocabularies differ (" + pv.hash() + " vs " +
             tv.hash() + ")");
  }
}

}  // namespace ppldecode
