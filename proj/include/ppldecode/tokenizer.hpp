#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ppldecode/error.hpp"
#include "ppldecode/vocabulary.hpp"

namespace ppldecode {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual TokenSeq encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;
};

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) words.push_back(std::move(w));
  return words;
}

/// Words map to vocabulary entries by exact match. Unseen words become
/// "<unk>" when the vocabulary has one and are rejected otherwise.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  explicit WhitespaceTokenizer(const Vocabulary& vocab) : vocab_(&vocab) {}

  TokenSeq encode(std::string_view text) const override {
    TokenSeq ids;
    for (const auto& w : split_whitespace(text)) {
      if (auto id = vocab_->find(w)) {
        ids.push_back(*id);
      } else if (auto unk = vocab_->unk_id()) {
        ids.push_back(*unk);
      } else {
        fail(ErrorKind::kInvalidInput,
             "word '" + w + "' not in vocabulary and no <unk> token");
      }
    }
    return ids;
  }

  std::string decode(std::span<const TokenId> ids) const override {
    std::string out;
    for (TokenId id : ids) {
      if (id == vocab_->eos_id()) continue;
      if (vocab_->bos_id() && id == *vocab_->bos_id()) continue;
      if (!out.empty()) out.push_back(' ');
      out += vocab_->token(id);
    }
    return out;
  }

 private:
  const Vocabulary* vocab_;
};

/// Fraction of ids equal to the vocabulary's "<unk>" (0 when it has none).
inline double unk_rate(const Vocabulary& vocab, std::span<const TokenId> ids) {
  const auto unk = vocab.unk_id();
  if (!unk || ids.empty()) return 0.0;
  std::size_t n = 0;
  for (TokenId id : ids) n += (id == *unk);
  return static_cast<double>(n) / static_cast<double>(ids.size());
}

}  // namespace ppldecode
