#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * Evaluation metrics and analysis exports.
 *
 * - Prompt instantiation: input, prompt and a "Choices: ... Answer: " suffix,
 *   newline separated.
 * - Average prompt perplexity over instantiated prompts.
 * - Accuracy by label ranking: each label is scored by its mean per-token
 *   log-probability after the instantiated prompt; the best label wins,
 *   lowest index on ties.
 * - Alpha sweeps of the ensemble decoder and perplexity scatter exports.
 *
 * Per-instance work may run on several threads; results are always reduced
 * in input order so reports do not depend on the worker count.
 */

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ppldecode/decode_ensemble.hpp"
#include "ppldecode/error.hpp"
#include "ppldecode/generation.hpp"
#include "ppldecode/language_model.hpp"
#include "ppldecode/tokenizer.hpp"
#include "ppldecode/toy_models.hpp"

namespace ppldecode {

inline constexpr double kUnkWarningRate = 0.5;

struct PromptTemplate {
  std::string prompt_text;
  std::vector<std::string> label_choices;

  void validate() const {
    if (label_choices.size() < 2) {
      fail(ErrorKind::kValidation, "template needs at least two label choices");
    }
  }
};

struct LabeledExample {
  std::string input_text;
  std::string gold_label;
};

inline std::string choices_suffix(const std::vector<std::string>& choices) {
  std::string out = "Choices: ";
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i > 0) out += ", ";
    out += choices[i];
  }
  out += ". Answer: ";
  return out;
}

inline std::string instantiate_prompt(const PromptTemplate& tmpl,
                                      const LabeledExample& ex) {
  tmpl.validate();
  if (ex.input_text.empty()) fail(ErrorKind::kInvalidInput, "empty instance input");
  return ex.input_text + "\n" + tmpl.prompt_text + "\n" +
         choices_suffix(tmpl.label_choices);
}

namespace detail {

inline std::size_t gold_index(const PromptTemplate& tmpl, const LabeledExample& ex) {
  const auto& c = tmpl.label_choices;
  const auto it = std::find(c.begin(), c.end(), ex.gold_label);
  if (it == c.end()) {
    fail(ErrorKind::kValidation, "gold label '" + ex.gold_label + "' is not a declared choice");
  }
  return static_cast<std::size_t>(it - c.begin());
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first failure
/// by index is rethrown after all threads join.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  auto body = [&](std::size_t start) {
    for (std::size_t i = start; i < n; i += w) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (w == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < w; ++t) threads.emplace_back(body, t);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

struct PromptScore {
  TokenSeq tokens;
  double perplexity;
  double unk_rate;
};

inline PromptScore score_prompt(const LanguageModel& model, const Tokenizer& tokenizer,
                                const PromptTemplate& tmpl, const LabeledExample& ex) {
  PromptScore s;
  s.tokens = tokenizer.encode(instantiate_prompt(tmpl, ex));
  s.perplexity = perplexity(model, s.tokens);
  s.unk_rate = unk_rate(model.vocabulary(), s.tokens);
  return s;
}

inline std::string unk_warning(std::size_t index, double rate) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "instance %zu: <unk> rate %.3f exceeds 0.5", index, rate);
  return buf;
}

/// Arithmetic mean of instantiated-prompt perplexities.
inline double avg_prompt_perplexity(const LanguageModel& model, const Tokenizer& tokenizer,
                                    const PromptTemplate& tmpl,
                                    const std::vector<LabeledExample>& examples,
                                    std::vector<std::string>* warnings = nullptr) {
  if (examples.empty()) fail(ErrorKind::kInvalidInput, "no examples");
  double sum = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const PromptScore s = score_prompt(model, tokenizer, tmpl, examples[i]);
    if (warnings && s.unk_rate > kUnkWarningRate) warnings->push_back(unk_warning(i, s.unk_rate));
    sum += s.perplexity;
  }
  return sum / static_cast<double>(examples.size());
}

/// Index of the label with the highest mean per-token log-probability
/// continuing `prompt_tokens`; lowest index on ties.
inline std::size_t classify(const LanguageModel& model, std::span<const TokenId> prompt_tokens,
                            const std::vector<TokenSeq>& labels) {
  if (labels.size() < 2) fail(ErrorKind::kInvalidInput, "need at least two labels");
  for (const auto& l : labels) {
    if (l.empty()) fail(ErrorKind::kInvalidInput, "label tokenizes to nothing");
  }
  std::size_t best = 0;
  double best_score = kNegInf;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double score = sequence_log_prob(model, labels[i], prompt_tokens) /
                         static_cast<double>(labels[i].size());
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

struct InstanceResult {
  double perplexity = 0.0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  bool correct = false;
  double unk_rate = 0.0;
};

struct EvalReport {
  double avg_perplexity = 0.0;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t n = 0;
  std::vector<InstanceResult> rows;
  std::vector<std::string> warnings;
};

inline EvalReport evaluate(const LanguageModel& model, const Tokenizer& tokenizer,
                           const PromptTemplate& tmpl,
                           const std::vector<LabeledExample>& dataset, int workers = 1) {
  tmpl.validate();
  if (dataset.empty()) fail(ErrorKind::kInvalidInput, "empty dataset");
  std::vector<TokenSeq> labels;
  for (const auto& choice : tmpl.label_choices) labels.push_back(tokenizer.encode(choice));

  EvalReport report;
  report.n = dataset.size();
  report.rows.resize(dataset.size());
  detail::parallel_for(dataset.size(), workers, [&](std::size_t i) {
    const LabeledExample& ex = dataset[i];
    InstanceResult& row = report.rows[i];
    row.gold = detail::gold_index(tmpl, ex);
    const PromptScore s = score_prompt(model, tokenizer, tmpl, ex);
    row.perplexity = s.perplexity;
    row.unk_rate = s.unk_rate;
    row.predicted = classify(model, s.tokens, labels);
    row.correct = row.predicted == row.gold;
  });

  double sum = 0.0;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& row = report.rows[i];
    sum += row.perplexity;
    report.correct += row.correct;
    if (row.unk_rate > kUnkWarningRate) report.warnings.push_back(unk_warning(i, row.unk_rate));
  }
  report.avg_perplexity = sum / static_cast<double>(report.n);
  report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.n);
  return report;
}

// ---------------------------------------------------------------------------
// Scatter export and alpha sweep

struct ScatterRow {
  std::size_t prompt_id = 0;
  std::string paraphrase_text;
  double ppl_as_output = 0.0;  // under P_para given x_sys ∘ x_ori
  double ppl_as_input = 0.0;   // under P_tar, standalone
};

struct ScatterExport {
  std::vector<ScatterRow> rows;
  std::vector<std::size_t> skipped;  // prompts whose paraphrase came out empty
};

/// Greedy-paraphrases each prompt and records both perplexities of the
/// output. Prompts whose paraphrase is empty have no perplexity and are
/// listed in `skipped`.
inline ScatterExport scatter_export(const LanguageModel& para, const LanguageModel& tar,
                                    const std::vector<TokenSeq>& prompts,
                                    const GreedyConfig& cfg,
                                    const Tokenizer* detokenizer = nullptr) {
  require_shared_vocabulary(para, tar);
  ScatterExport out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const GenerationResult r = decode_greedy(para, tar, prompts[i], cfg, detokenizer);
    if (r.tokens.empty()) {
      out.skipped.push_back(i);
      continue;
    }
    out.rows.push_back({i, r.text, r.paraphrase_conditional_ppl, r.target_perplexity});
  }
  return out;
}

/// Average-rank Spearman correlation; NaN for fewer than two points or a
/// constant column.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) fail(ErrorKind::kInvalidInput, "column lengths differ");
  const std::size_t n = x.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mean = 0.5 * static_cast<double>(n + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

/// (reference text, candidate text) -> similarity in [0, 1].
using SimilarityHook = std::function<double(std::string_view, std::string_view)>;

struct SweepRow {
  double alpha = 0.0;
  GenerationResult result;
  std::optional<double> similarity;
};

inline std::vector<SweepRow> sweep_alpha(const LanguageModel& para, const LanguageModel& tar,
                                         std::span<const TokenId> ori,
                                         const std::vector<double>& alphas,
                                         const EnsembleConfig& base,
                                         const SimilarityHook& similarity = {},
                                         std::string_view reference_text = {},
                                         const Tokenizer* detokenizer = nullptr) {
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) fail(ErrorKind::kInvalidInput, "alpha must lie in [0, 1]");
  }
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    EnsembleConfig cfg = base;
    cfg.alpha = a;
    SweepRow row{a, decode_ensemble(para, tar, ori, cfg, detokenizer), std::nullopt};
    if (similarity) row.similarity = similarity(reference_text, row.result.text);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// File formats

/// %.6g rendering used by every CSV export.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline constexpr std::string_view kReportHeader = "template_id,alpha,mode,accuracy,avg_ppl,n";
inline constexpr std::string_view kScatterHeader = "prompt_id,ppl_as_output,ppl_as_input";
inline constexpr std::string_view kSweepHeader =
    "prompt_id,alpha,paraphrase,target_ppl,finish_reason,similarity";

/// One report line; `alpha` is left blank for modes without a coefficient.
inline std::string report_csv_row(std::size_t template_id, std::optional<double> alpha,
                                  std::string_view mode, const EvalReport& r) {
  std::string line = std::to_string(template_id) + ",";
  if (alpha) line += format_real(*alpha);
  line += ",";
  line += csv_field(mode);
  line += "," + format_real(r.accuracy) + "," + format_real(r.avg_perplexity) + "," +
          std::to_string(r.n);
  return line;
}

inline std::string scatter_csv(const ScatterExport& ex) {
  std::string out(kScatterHeader);
  out += "\n";
  for (const auto& row : ex.rows) {
    out += std::to_string(row.prompt_id) + "," + format_real(row.ppl_as_output) + "," +
           format_real(row.ppl_as_input) + "\n";
  }
  return out;
}

inline std::string sweep_csv_row(std::size_t prompt_id, const SweepRow& row) {
  std::string line = std::to_string(prompt_id) + "," + format_real(row.alpha) + "," +
                     csv_field(row.result.text) + "," +
                     format_real(row.result.target_perplexity) + "," +
                     to_string(row.result.finish_reason) + ",";
  if (row.similarity) line += format_real(*row.similarity);
  return line;
}

namespace detail {

template <typename Fn>
void for_each_json_line(const std::string& path, Fn&& fn) {
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (split_whitespace(lines[i]).empty()) continue;
    try {
      fn(nlohmann::json::parse(lines[i]));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kValidation,
           path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
}

}  // namespace detail

/// JSON lines of {"input": ..., "label": ...}.
inline std::vector<LabeledExample> read_dataset(const std::string& path) {
  std::vector<LabeledExample> out;
  detail::for_each_json_line(path, [&](const nlohmann::json& j) {
    out.push_back({j.at("input").get<std::string>(), j.at("label").get<std::string>()});
  });
  return out;
}

/// JSON lines of {"prompt": ..., "choices": [...]}.
inline std::vector<PromptTemplate> read_templates(const std::string& path) {
  std::vector<PromptTemplate> out;
  detail::for_each_json_line(path, [&](const nlohmann::json& j) {
    out.push_back({j.at("prompt").get<std::string>(),
                   j.at("choices").get<std::vector<std::string>>()});
  });
  return out;
}

}  // namespace ppldecode
