#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <openssl/evp.h>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ppldecode/error.hpp"

namespace ppldecode {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::string_view kUnkToken = "<unk>";

/// Lowercase hex SHA-256 of the newline-joined token strings (no trailing
/// newline). Two models may only be ensembled when these digests agree.
inline std::string compute_vocab_hash(std::span<const std::string> tokens) {
  std::string joined;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) joined.push_back('\n');
    joined += tokens[i];
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(joined.data(), joined.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    fail(ErrorKind::kValidation, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

/// Dense id <-> string mapping shared by every model bound to a decoding run.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> tokens, TokenId eos_id,
             std::optional<TokenId> bos_id = std::nullopt)
      : tokens_(std::move(tokens)), eos_id_(eos_id), bos_id_(bos_id) {
    if (tokens_.empty()) fail(ErrorKind::kValidation, "empty vocabulary");
    if (eos_id_ < 0 || eos_id_ >= size()) {
      fail(ErrorKind::kValidation, "eos id out of range");
    }
    if (bos_id_ && (*bos_id_ < 0 || *bos_id_ >= size())) {
      fail(ErrorKind::kValidation, "bos id out of range");
    }
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
        fail(ErrorKind::kValidation, "duplicate token '" + tokens_[i] + "'");
      }
    }
    hash_ = compute_vocab_hash(tokens_);
  }

  TokenId size() const { return static_cast<TokenId>(tokens_.size()); }
  TokenId eos_id() const { return eos_id_; }
  std::optional<TokenId> bos_id() const { return bos_id_; }
  const std::string& hash() const { return hash_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  const std::string& token(TokenId id) const {
    if (!contains(id)) fail(ErrorKind::kInvalidInput, "token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::optional<TokenId> find(std::string_view text) const {
    auto it = index_.find(std::string(text));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<TokenId> unk_id() const { return find(kUnkToken); }

  bool contains(TokenId id) const { return id >= 0 && id < size(); }

  /// Throws invalid-input if any id falls outside the vocabulary.
  void check(std::span<const TokenId> ids) const {
    for (TokenId id : ids) {
      if (!contains(id)) {
        fail(ErrorKind::kInvalidInput,
             "token id " + std::to_string(id) + " outside vocabulary of size " +
                 std::to_string(size()));
      }
    }
  }

  bool verify_hash() const { return compute_vocab_hash(tokens_) == hash_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.eos_id_ == b.eos_id_ &&
           a.bos_id_ == b.bos_id_;
  }

 private:
  std::vector<std::string> tokens_;
  TokenId eos_id_;
  std::optional<TokenId> bos_id_;
  std::unordered_map<std::string, TokenId> index_;
  std::string hash_;
};

}  // namespace ppldecode
