#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * Client adapter exposing a wire-protocol inference server as a
 * LanguageModel (and Tokenizer).
 *
 *   GET  /v1/vocab       -> {vocab_size, eos_id, bos_id, vocab_hash, tokens}
 *   POST /v1/logprobs    {"tokens": [...]} -> {"log_probs": [...]}
 *   POST /v1/tokenize    {"text": "..."}   -> {"tokens": [...]}
 *   POST /v1/detokenize  {"tokens": [...]} -> {"text": "..."}
 *
 * Contexts travel as token ids. The server never prepends BOS; this client
 * does when the vocabulary declares one. Every admitted vector is checked
 * for length, sign and normalization (1e-3); JSON null decodes to -inf.
 */

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <semaphore>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ppldecode/error.hpp"
#include "ppldecode/language_model.hpp"
#include "ppldecode/tokenizer.hpp"
#include "ppldecode/vocabulary.hpp"

namespace ppldecode {

struct RemoteOptions {
  int timeout_ms = 30000;
  int retry_limit = 2;
  int max_in_flight = 8;
};

namespace detail {

/// Splits "http://host:port/base" into ("http://host:port", "/base").
inline std::pair<std::string, std::string> split_base_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) {
    fail(ErrorKind::kInvalidInput, "base url '" + url + "' lacks a scheme");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string path = url.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, slash), path};
}

}  // namespace detail

class RemoteModel final : public LanguageModel, public Tokenizer {
 public:
  RemoteModel(std::string base_url, RemoteOptions opts)
      : base_url_(std::move(base_url)),
        opts_(opts),
        in_flight_(std::max(1, opts.max_in_flight)) {
    std::tie(origin_, path_prefix_) = detail::split_base_url(base_url_);
    vocab_.emplace(fetch_vocabulary());
  }

  const Vocabulary& vocabulary() const override { return *vocab_; }
  const std::string& base_url() const { return base_url_; }

  LogProbVector query(std::span<const TokenId> context) const override {
    nlohmann::json ids = nlohmann::json::array();
    if (vocab_->bos_id()) ids.push_back(*vocab_->bos_id());
    for (TokenId id : context) ids.push_back(id);
    const nlohmann::json reply = post("/v1/logprobs", {{"tokens", ids}});
    if (!reply.contains("log_probs") || !reply["log_probs"].is_array()) {
      fail(ErrorKind::kProtocolViolation, "logprobs: missing 'log_probs' array");
    }
    LogProbVector lp;
    lp.reserve(reply["log_probs"].size());
    for (const auto& v : reply["log_probs"]) {
      if (v.is_null()) {
        lp.push_back(kNegInf);
      } else if (v.is_number()) {
        lp.push_back(v.get<double>());
      } else {
        fail(ErrorKind::kProtocolViolation, "logprobs: non-numeric entry");
      }
    }
    if (auto why = check_distribution(lp, static_cast<std::size_t>(vocab_->size()),
                                      kRemoteNormTolerance);
        !why.empty()) {
      fail(ErrorKind::kProtocolViolation, "logprobs: " + why);
    }
    return lp;
  }

  TokenSeq encode(std::string_view text) const override {
    const nlohmann::json reply = post("/v1/tokenize", {{"text", std::string(text)}});
    if (!reply.contains("tokens") || !reply["tokens"].is_array()) {
      fail(ErrorKind::kProtocolViolation, "tokenize: missing 'tokens' array");
    }
    TokenSeq ids;
    for (const auto& v : reply["tokens"]) {
      if (!v.is_number_integer()) {
        fail(ErrorKind::kProtocolViolation, "tokenize: non-integer id");
      }
      ids.push_back(v.get<TokenId>());
    }
    if (!std::all_of(ids.begin(), ids.end(),
                     [&](TokenId id) { return vocab_->contains(id); })) {
      fail(ErrorKind::kProtocolViolation, "tokenize: id outside vocabulary");
    }
    return ids;
  }

  std::string decode(std::span<const TokenId> ids) const override {
    nlohmann::json arr = nlohmann::json::array();
    for (TokenId id : ids) arr.push_back(id);
    const nlohmann::json reply = post("/v1/detokenize", {{"tokens", arr}});
    if (!reply.contains("text") || !reply["text"].is_string()) {
      fail(ErrorKind::kProtocolViolation, "detokenize: missing 'text' string");
    }
    return reply["text"].get<std::string>();
  }

 private:
  Vocabulary fetch_vocabulary() const {
    const nlohmann::json v = request("GET", "/v1/vocab", nullptr);
    auto need = [&](const char* key) -> const nlohmann::json& {
      if (!v.contains(key)) {
        fail(ErrorKind::kProtocolViolation, std::string("vocab: missing '") + key + "'");
      }
      return v[key];
    };
    const auto& size = need("vocab_size");
    const auto& eos = need("eos_id");
    const auto& bos = need("bos_id");
    const auto& hash = need("vocab_hash");
    const auto& tokens = need("tokens");
    if (!size.is_number_integer() || !eos.is_number_integer() ||
        !(bos.is_null() || bos.is_number_integer()) || !hash.is_string() ||
        !tokens.is_array()) {
      fail(ErrorKind::kProtocolViolation, "vocab: field of the wrong type");
    }
    if (tokens.size() != size.get<std::size_t>()) {
      fail(ErrorKind::kProtocolViolation, "vocab: token list length != vocab_size");
    }
    std::vector<std::string> list;
    for (const auto& t : tokens) list.push_back(t.get<std::string>());
    std::optional<TokenId> bos_id;
    if (!bos.is_null()) bos_id = bos.get<TokenId>();
    std::optional<Vocabulary> vocab;
    try {
      vocab.emplace(std::move(list), eos.get<TokenId>(), bos_id);
    } catch (const Error& e) {
      fail(ErrorKind::kProtocolViolation, std::string("vocab: ") + e.what());
    }
    if (vocab->hash() != hash.get<std::string>()) {
      fail(ErrorKind::kProtocolViolation, "vocab: vocab_hash does not match tokens");
    }
    return std::move(*vocab);
  }

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
    return request("POST", path, &body);
  }

  nlohmann::json request(const char* method, const std::string& path,
                         const nlohmann::json* body) const {
    in_flight_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{in_flight_};

    const std::string full = path_prefix_ + path;
    const std::string payload = body ? body->dump() : std::string();
    std::string last_error;
    for (int attempt = 0; attempt <= opts_.retry_limit; ++attempt) {
      httplib::Client cli(origin_);
      const auto timeout = std::chrono::milliseconds(opts_.timeout_ms);
      cli.set_connection_timeout(timeout);
      cli.set_read_timeout(timeout);
      cli.set_write_timeout(timeout);
      auto res = body ? cli.Post(full, payload, "application/json") : cli.Get(full);
      if (!res) {
        last_error = httplib::to_string(res.error());
      } else if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
      } else if (res->status != 200) {
        fail(ErrorKind::kProtocolViolation, std::string(method) + " " + path +
                                                " returned HTTP " +
                                                std::to_string(res->status) +
                                                ": " + res->body);
      } else {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception&) {
          fail(ErrorKind::kProtocolViolation, path + ": body is not JSON");
        }
      }
      if (attempt < opts_.retry_limit) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50 << attempt));
      }
    }
    fail(ErrorKind::kModelUnavailable,
         base_url_ + path + " unreachable: " + last_error);
  }

  std::string base_url_;
  std::string origin_;
  std::string path_prefix_;
  RemoteOptions opts_;
  std::optional<Vocabulary> vocab_;
  mutable std::counting_semaphore<> in_flight_;
};

inline std::shared_ptr<RemoteModel> connect(const std::string& base_url,
                                            RemoteOptions opts = {}) {
  return std::make_shared<RemoteModel>(base_url, opts);
}

struct ConformanceReport {
  int probes = 0;
  int violations = 0;
  std::vector<std::string> messages;
};

/// Queries `probes` random contexts (length 0..max_context) and records
/// every protocol violation instead of stopping at the first.
inline ConformanceReport probe_conformance(const LanguageModel& model, int probes,
                                           std::uint64_t seed, int max_context = 16) {
  ConformanceReport report;
  std::mt19937_64 rng(seed);
  const TokenId n = model.vocabulary().size();
  std::uniform_int_distribution<TokenId> pick(0, n - 1);
  std::uniform_int_distribution<int> len(0, max_context);
  for (int i = 0; i < probes; ++i) {
    TokenSeq ctx(static_cast<std::size_t>(len(rng)));
    for (auto& id : ctx) id = pick(rng);
    ++report.probes;
    try {
      (void)next_log_probs(model, ctx);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kProtocolViolation) throw;
      ++report.violations;
      report.messages.emplace_back(e.what());
    }
  }
  return report;
}

}  // namespace ppldecode
