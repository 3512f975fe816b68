#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * Exactly computable language models used as fixtures and oracles.
 *
 * TableLM   explicit probability rows keyed by context suffix
 * NGramLM   additive-smoothed n-gram counts over a whitespace corpus
 *
 * Both are immutable after construction and safe to share across threads.
 */

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ppldecode/error.hpp"
#include "ppldecode/language_model.hpp"
#include "ppldecode/tokenizer.hpp"
#include "ppldecode/vocabulary.hpp"

namespace ppldecode {

inline constexpr std::string_view kEosToken = "</s>";

namespace detail {

inline std::string join_tokens(const Vocabulary& vocab,
                               std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

/// Normalizes a probability row and converts it to log space. Zero stays a
/// hard zero (-inf).
inline LogProbVector to_log_row(const std::vector<double>& probs, double tol,
                                const std::string& where) {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      fail(ErrorKind::kValidation,
           "row for context '" + where + "' has a negative or non-finite entry");
    }
    sum += p;
  }
  if (!(std::abs(sum - 1.0) <= tol)) {
    fail(ErrorKind::kValidation, "row for context '" + where + "' sums to " +
                                     std::to_string(sum) + ", not 1");
  }
  LogProbVector lp(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    lp[i] = probs[i] == 0.0 ? kNegInf : std::log(probs[i] / sum);
  }
  return lp;
}

}  // namespace detail

class TableLM final : public LanguageModel {
 public:
  using RowMap = std::map<TokenSeq, LogProbVector>;

  /// `rows` keys are context suffixes of length 1..order; `default_row`
  /// answers every context with no matching suffix (including the empty
  /// one). All rows are log-probabilities.
  TableLM(Vocabulary vocab, int order, RowMap rows, LogProbVector default_row)
      : vocab_(std::move(vocab)),
        order_(order),
        rows_(std::move(rows)),
        default_row_(std::move(default_row)) {
    if (order_ < 0) fail(ErrorKind::kValidation, "order must be >= 0");
    const auto n = static_cast<std::size_t>(vocab_.size());
    if (auto why = check_distribution(default_row_, n, 1e-9); !why.empty()) {
      fail(ErrorKind::kValidation, "default row: " + why);
    }
    for (const auto& [ctx, row] : rows_) {
      if (ctx.empty() || ctx.size() > static_cast<std::size_t>(order_)) {
        fail(ErrorKind::kValidation,
             "row context length must be in 1..order");
      }
      vocab_.check(ctx);
      if (auto why = check_distribution(row, n, 1e-9); !why.empty()) {
        fail(ErrorKind::kValidation, "row for context '" +
                                         detail::join_tokens(vocab_, ctx) +
                                         "': " + why);
      }
    }
  }

  const Vocabulary& vocabulary() const override { return vocab_; }
  int order() const { return order_; }
  const RowMap& rows() const { return rows_; }
  const LogProbVector& default_row() const { return default_row_; }

  LogProbVector query(std::span<const TokenId> context) const override {
    TokenSeq full;
    if (vocab_.bos_id()) full.push_back(*vocab_.bos_id());
    full.insert(full.end(), context.begin(), context.end());
    const std::size_t longest =
        std::min(full.size(), static_cast<std::size_t>(order_));
    for (std::size_t len = longest; len > 0; --len) {
      TokenSeq key(full.end() - static_cast<long>(len), full.end());
      if (auto it = rows_.find(key); it != rows_.end()) return it->second;
    }
    return default_row_;
  }

  friend bool operator==(const TableLM& a, const TableLM& b) {
    return a.vocab_ == b.vocab_ && a.order_ == b.order_ &&
           a.rows_ == b.rows_ && a.default_row_ == b.default_row_;
  }

 private:
  Vocabulary vocab_;
  int order_;
  RowMap rows_;
  LogProbVector default_row_;
};

/// Builds a TableLM from a fixture document:
///   {"vocab": [...], "eos": "</s>", "bos": null, "order": 1,
///    "rows": {"a b": {"a": 0.5, ...}}, "default_row": {...}}
/// Row keys are space-joined context tokens; omitted tokens get probability
/// zero. "eos" defaults to "</s>"; "bos" is optional.
inline TableLM table_lm_from_spec(const nlohmann::json& spec) {
  if (!spec.is_object()) fail(ErrorKind::kValidation, "fixture is not an object");
  if (!spec.contains("vocab") || !spec["vocab"].is_array()) {
    fail(ErrorKind::kValidation, "fixture missing 'vocab' list");
  }
  if (!spec.contains("default_row")) {
    fail(ErrorKind::kValidation, "fixture missing 'default_row'");
  }
  std::vector<std::string> tokens;
  for (const auto& t : spec["vocab"]) tokens.push_back(t.get<std::string>());

  auto lookup = [&](const std::string& name) -> TokenId {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] == name) return static_cast<TokenId>(i);
    }
    fail(ErrorKind::kValidation, "token '" + name + "' not in fixture vocab");
  };
  const TokenId eos = lookup(spec.value("eos", std::string(kEosToken)));
  std::optional<TokenId> bos;
  if (spec.contains("bos") && !spec["bos"].is_null()) {
    bos = lookup(spec["bos"].get<std::string>());
  }
  Vocabulary vocab(tokens, eos, bos);

  auto parse_row = [&](const nlohmann::json& obj, const std::string& where) {
    if (!obj.is_object()) {
      fail(ErrorKind::kValidation, "row for context '" + where + "' is not an object");
    }
    std::vector<double> probs(tokens.size(), 0.0);
    for (const auto& [name, p] : obj.items()) {
      probs[static_cast<std::size_t>(lookup(name))] = p.get<double>();
    }
    return detail::to_log_row(probs, 1e-6, where);
  };

  const int order = spec.value("order", 1);
  TableLM::RowMap rows;
  if (spec.contains("rows")) {
    for (const auto& [key, row] : spec["rows"].items()) {
      TokenSeq ctx;
      for (const auto& w : split_whitespace(key)) ctx.push_back(lookup(w));
      if (ctx.empty()) {
        fail(ErrorKind::kValidation, "empty row context; use 'default_row'");
      }
      rows.emplace(std::move(ctx), parse_row(row, key));
    }
  }
  LogProbVector def = parse_row(spec["default_row"], "<default>");
  return TableLM(std::move(vocab), order, std::move(rows), std::move(def));
}

inline TableLM load_table_lm(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read fixture '" + path + "'");
  nlohmann::json spec;
  try {
    in >> spec;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, "fixture '" + path + "': " + e.what());
  }
  return table_lm_from_spec(spec);
}

/// Vocabulary of `vocab_size` tokens "w0".."w{n-2}" followed by "</s>".
inline Vocabulary synthetic_vocabulary(int vocab_size) {
  if (vocab_size < 2) fail(ErrorKind::kInvalidInput, "vocab_size must be >= 2");
  std::vector<std::string> tokens;
  for (int i = 0; i + 1 < vocab_size; ++i) tokens.push_back("w" + std::to_string(i));
  tokens.emplace_back(kEosToken);
  return Vocabulary(std::move(tokens), vocab_size - 1);
}

/// Reproducible TableLM whose rows are normalized exponential draws (a
/// symmetric Dirichlet(1) sample). Rows exist for every non-EOS context of
/// length 1..order; the default row serves the sequence start.
inline TableLM random_table_lm(std::uint64_t seed, int vocab_size, int order) {
  Vocabulary vocab = synthetic_vocabulary(vocab_size);
  if (order < 0) fail(ErrorKind::kInvalidInput, "order must be >= 0");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> draw(1.0);
  const auto n = static_cast<std::size_t>(vocab_size);
  auto make_row = [&] {
    std::vector<double> w(n);
    double sum = 0.0;
    for (auto& x : w) {
      x = draw(rng) + 1e-12;
      sum += x;
    }
    for (auto& x : w) x /= sum;
    return detail::to_log_row(w, 1e-9, "<random>");
  };

  LogProbVector def = make_row();
  TableLM::RowMap rows;
  const TokenId symbols = vocab.size() - 1;  // contexts never contain EOS
  for (int len = 1; len <= order; ++len) {
    TokenSeq ctx(static_cast<std::size_t>(len), 0);
    while (true) {
      rows.emplace(ctx, make_row());
      int pos = len - 1;
      while (pos >= 0 && ++ctx[static_cast<std::size_t>(pos)] == symbols) {
        ctx[static_cast<std::size_t>(pos)] = 0;
        --pos;
      }
      if (pos < 0) break;
    }
  }
  return TableLM(std::move(vocab), order, std::move(rows), std::move(def));
}

/// Additive-smoothed n-gram model:
///   P(t | ctx) = (count(ctx, t) + alpha) / (count(ctx) + alpha * |V|)
/// where ctx is the previous order-1 tokens. Sentences are padded with an
/// internal start marker that is not a vocabulary entry, and every sentence
/// ends with EOS.
class NGramLM final : public LanguageModel {
 public:
  struct ContextCounts {
    std::uint64_t total = 0;
    std::map<TokenId, std::uint64_t> next;
  };
  using CountTable = std::map<TokenSeq, ContextCounts>;

  static constexpr TokenId kStartPad = -1;

  NGramLM(Vocabulary vocab, int order, double smoothing_alpha, CountTable counts)
      : vocab_(std::move(vocab)),
        order_(order),
        alpha_(smoothing_alpha),
        counts_(std::move(counts)) {
    if (order_ < 1) fail(ErrorKind::kInvalidInput, "n-gram order must be >= 1");
    if (!(alpha_ > 0.0)) fail(ErrorKind::kInvalidInput, "smoothing alpha must be > 0");
  }

  const Vocabulary& vocabulary() const override { return vocab_; }
  int order() const { return order_; }
  double smoothing_alpha() const { return alpha_; }
  const CountTable& counts() const { return counts_; }

  /// The order-1 token history used for `context`, start-padded.
  TokenSeq history(std::span<const TokenId> context) const {
    const auto h = static_cast<std::size_t>(order_ - 1);
    TokenSeq out(h, kStartPad);
    const std::size_t take = std::min(h, context.size());
    std::copy(context.end() - static_cast<long>(take), context.end(),
              out.end() - static_cast<long>(take));
    return out;
  }

  LogProbVector query(std::span<const TokenId> context) const override {
    const auto n = static_cast<std::size_t>(vocab_.size());
    const double denom_extra = alpha_ * static_cast<double>(n);
    LogProbVector lp(n);
    auto it = counts_.find(history(context));
    if (it == counts_.end()) {
      std::fill(lp.begin(), lp.end(), -std::log(static_cast<double>(n)));
      return lp;
    }
    const double log_denom =
        std::log(static_cast<double>(it->second.total) + denom_extra);
    const double base = std::log(alpha_) - log_denom;
    std::fill(lp.begin(), lp.end(), base);
    for (const auto& [id, c] : it->second.next) {
      lp[static_cast<std::size_t>(id)] =
          std::log(static_cast<double>(c) + alpha_) - log_denom;
    }
    return lp;
  }

 private:
  Vocabulary vocab_;
  int order_;
  double alpha_;
  CountTable counts_;
};

/// Word types in first-appearance order, then "</s>" and "<unk>".
inline Vocabulary build_corpus_vocabulary(std::span<const std::string> corpus) {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, bool> seen;
  for (const auto& line : corpus) {
    for (auto& w : split_whitespace(line)) {
      if (w == kEosToken || w == kUnkToken) continue;
      if (seen.emplace(w, true).second) tokens.push_back(std::move(w));
    }
  }
  const auto eos = static_cast<TokenId>(tokens.size());
  tokens.emplace_back(kEosToken);
  tokens.emplace_back(kUnkToken);
  return Vocabulary(std::move(tokens), eos);
}

/// Counts n-grams over non-blank corpus lines. When `vocab` is given, words
/// outside it are counted as "<unk>" (which it must then contain).
inline NGramLM train_ngram(std::span<const std::string> corpus, int order,
                           double smoothing_alpha,
                           std::optional<Vocabulary> vocab = std::nullopt) {
  if (order < 1) fail(ErrorKind::kInvalidInput, "n-gram order must be >= 1");
  if (!(smoothing_alpha > 0.0)) {
    fail(ErrorKind::kInvalidInput, "smoothing alpha must be > 0");
  }
  std::vector<std::vector<std::string>> lines;
  for (const auto& line : corpus) {
    auto words = split_whitespace(line);
    if (!words.empty()) lines.push_back(std::move(words));
  }
  if (lines.empty()) fail(ErrorKind::kInvalidInput, "empty corpus");
  if (!vocab) vocab = build_corpus_vocabulary(corpus);

  const auto h = static_cast<std::size_t>(order - 1);
  NGramLM::CountTable counts;
  for (const auto& words : lines) {
    TokenSeq seq(h, NGramLM::kStartPad);
    for (const auto& w : words) {
      auto id = vocab->find(w);
      if (!id) id = vocab->unk_id();
      if (!id) fail(ErrorKind::kInvalidInput, "word '" + w + "' outside vocabulary");
      seq.push_back(*id);
    }
    seq.push_back(vocab->eos_id());
    for (std::size_t i = h; i < seq.size(); ++i) {
      TokenSeq ctx(seq.begin() + static_cast<long>(i - h),
                   seq.begin() + static_cast<long>(i));
      auto& cc = counts[ctx];
      ++cc.total;
      ++cc.next[seq[i]];
    }
  }
  return NGramLM(std::move(*vocab), order, smoothing_alpha, std::move(counts));
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace ppldecode
