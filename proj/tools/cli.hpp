#pragma once

// SPDX-License-Identifier: Apache-2.0

// Command-line front end. run() is separate from main() so tests can drive
// it in-process.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ppldecode/decode_ensemble.hpp"
#include "ppldecode/decode_search.hpp"
#include "ppldecode/eval_harness.hpp"
#include "ppldecode/fixtures.hpp"
#include "ppldecode/remote_model.hpp"
#include "ppldecode/toy_models.hpp"

namespace ppldecode::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIoError = 3,
  kVocabMismatch = 4,
  kBadInput = 5,
  kModelError = 6,
  kStuck = 7,
  kOracleMismatch = 8,
};

inline constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  usage error (unknown flag, bad value, flag not valid for mode)\n"
    "  3  unreadable or unwritable file\n"
    "  4  configuration error (paraphrase/target vocabulary mismatch)\n"
    "  5  invalid input or fixture validation failure\n"
    "  6  remote model unavailable or protocol violation\n"
    "  7  decoding stuck (every candidate has zero probability)\n"
    "  8  oracle-check mismatch or oracle size limit\n";

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return kIoError;
    case ErrorKind::kConfiguration: return kVocabMismatch;
    case ErrorKind::kInvalidInput:
    case ErrorKind::kValidation: return kBadInput;
    case ErrorKind::kModelUnavailable:
    case ErrorKind::kProtocolViolation: return kModelError;
    case ErrorKind::kDecodingStuck: return kStuck;
    case ErrorKind::kOracleLimit: return kOracleMismatch;
  }
  return kInternal;
}

/// Paraphrase and target models plus the tokenizer used for text I/O.
struct ModelBinding {
  std::shared_ptr<const LanguageModel> para;
  std::shared_ptr<const LanguageModel> tar;
  std::shared_ptr<const Tokenizer> tokenizer;
};

struct ModelSpec {
  enum class Kind { kFixture, kNGram, kHttp } kind;
  std::string path;  // fixture path, corpus path or url
  int order = 2;
  double alpha = 1.0;
};

inline ModelSpec parse_model_spec(const std::string& text) {
  auto starts = [&](std::string_view p) { return text.rfind(p, 0) == 0; };
  if (starts("fixture:")) return {ModelSpec::Kind::kFixture, text.substr(8)};
  if (starts("http://") || starts("https://")) return {ModelSpec::Kind::kHttp, text};
  if (starts("http:")) {
    std::string url = text.substr(5);
    if (url.rfind("//", 0) == 0) url = "http:" + url;
    return {ModelSpec::Kind::kHttp, url};
  }
  if (starts("ngram:")) {
    const std::string rest = text.substr(6);
    const auto c2 = rest.rfind(':');
    const auto c1 = c2 == std::string::npos || c2 == 0 ? std::string::npos : rest.rfind(':', c2 - 1);
    if (c1 == std::string::npos) {
      throw CLI::ValidationError("model", "expected ngram:<corpus>:<order>:<alpha>");
    }
    ModelSpec spec{ModelSpec::Kind::kNGram, rest.substr(0, c1)};
    try {
      spec.order = std::stoi(rest.substr(c1 + 1, c2 - c1 - 1));
      spec.alpha = std::stod(rest.substr(c2 + 1));
    } catch (const std::exception&) {
      throw CLI::ValidationError("model", "bad n-gram order or alpha in '" + text + "'");
    }
    return spec;
  }
  throw CLI::ValidationError("model", "unknown model binding '" + text +
                                          "' (use fixture:, ngram: or http:)");
}

inline std::shared_ptr<const LanguageModel> load_model(const ModelSpec& spec,
                                                       const std::optional<Vocabulary>& shared,
                                                       const RemoteOptions& remote) {
  switch (spec.kind) {
    case ModelSpec::Kind::kFixture:
      return std::make_shared<TableLM>(load_table_lm(spec.path));
    case ModelSpec::Kind::kNGram:
      return std::make_shared<NGramLM>(
          train_ngram(read_lines(spec.path), spec.order, spec.alpha, shared));
    case ModelSpec::Kind::kHttp:
      return connect(spec.path, remote);
  }
  return nullptr;
}

/// A single --para-model binds both roles. Two n-gram bindings share the
/// vocabulary of their concatenated corpora.
inline ModelBinding bind_models(const std::string& para_text,
                                const std::optional<std::string>& tar_text,
                                const RemoteOptions& remote) {
  const ModelSpec para_spec = parse_model_spec(para_text);
  ModelBinding b;
  std::optional<ModelSpec> tar_spec;
  if (tar_text && *tar_text != para_text) tar_spec = parse_model_spec(*tar_text);

  std::optional<Vocabulary> shared;
  if (tar_spec && para_spec.kind == ModelSpec::Kind::kNGram &&
      tar_spec->kind == ModelSpec::Kind::kNGram) {
    auto lines = read_lines(para_spec.path);
    auto more = read_lines(tar_spec->path);
    lines.insert(lines.end(), more.begin(), more.end());
    shared = build_corpus_vocabulary(lines);
  }
  b.para = load_model(para_spec, shared, remote);
  b.tar = tar_spec ? load_model(*tar_spec, shared, remote) : b.para;
  require_shared_vocabulary(*b.para, *b.tar);

  if (auto remote_tok = std::dynamic_pointer_cast<const RemoteModel>(b.para)) {
    b.tokenizer = remote_tok;
  } else {
    struct Owned {
      std::shared_ptr<const LanguageModel> model;
      WhitespaceTokenizer tokenizer;
    };
    auto owned = std::make_shared<Owned>(Owned{b.para, WhitespaceTokenizer(b.para->vocabulary())});
    b.tokenizer = std::shared_ptr<const Tokenizer>(owned, &owned->tokenizer);
  }
  return b;
}

enum class Mode { kOriginal, kGreedy, kEnsemble, kSearch };

struct Options {
  std::string para_model;
  std::optional<std::string> tar_model;
  std::string mode = "ensemble";
  double alpha = 0.5;
  int k = 3;
  std::optional<int> expand_width;
  int max_len = 32;
  std::string system_prompt{kDefaultSystemPrompt};
  std::uint64_t seed = 0;
  std::string input;
  std::string output;
  std::string prompt;
  std::string templates;
  std::string dataset;
  int workers = 1;
  std::vector<double> alphas{0.2, 0.5, 0.7};
  int timeout_ms = 30000;
  int retries = 2;
  int pairs = 100;
  int vocab_size = 5;
  int order = 2;
  int oracle_max_len = 4;
};

inline Mode parse_mode(const std::string& m, bool allow_original) {
  if (m == "greedy") return Mode::kGreedy;
  if (m == "ensemble") return Mode::kEnsemble;
  if (m == "search") return Mode::kSearch;
  if (m == "original" && allow_original) return Mode::kOriginal;
  throw CLI::ValidationError("--mode", "unsupported mode '" + m + "'");
}

class Runner {
 public:
  Runner(Options opts, std::ostream& out, std::ostream& err)
      : o_(std::move(opts)), out_(out), err_(err) {}

  void bind() {
    RemoteOptions remote;
    remote.timeout_ms = o_.timeout_ms;
    remote.retry_limit = o_.retries;
    models_ = bind_models(o_.para_model, o_.tar_model, remote);
    system_prompt_ = models_.tokenizer->encode(o_.system_prompt);
  }

  GenerationResult decode(Mode mode, std::span<const TokenId> ori) const {
    const LanguageModel& para = *models_.para;
    const LanguageModel& tar = *models_.tar;
    const Tokenizer* detok = models_.tokenizer.get();
    switch (mode) {
      case Mode::kEnsemble:
        return decode_ensemble(para, tar, ori, {o_.alpha, o_.max_len, system_prompt_}, detok);
      case Mode::kSearch:
        return decode_search(para, tar, ori, {o_.k, o_.expand_width, o_.max_len, system_prompt_},
                             detok);
      case Mode::kGreedy:
      case Mode::kOriginal:
        break;
    }
    return decode_greedy(para, tar, ori, {o_.max_len, system_prompt_}, detok);
  }

  TokenSeq encode_prompt(const std::string& text) const {
    TokenSeq ids = models_.tokenizer->encode(text);
    if (ids.empty()) fail(ErrorKind::kInvalidInput, "prompt '" + text + "' has no tokens");
    return ids;
  }

  std::vector<std::string> prompts() const {
    std::vector<std::string> out;
    if (!o_.prompt.empty()) out.push_back(o_.prompt);
    if (!o_.input.empty()) {
      for (auto& line : read_lines(o_.input)) {
        if (!split_whitespace(line).empty()) out.push_back(std::move(line));
      }
    }
    return out;
  }

  void emit(const std::string& text) const {
    if (o_.output.empty() || o_.output == "-") {
      out_ << text;
      return;
    }
    std::ofstream f(o_.output, std::ios::binary);
    if (!f) fail(ErrorKind::kIo, "cannot write '" + o_.output + "'");
    f << text;
    if (!f) fail(ErrorKind::kIo, "write to '" + o_.output + "' failed");
  }

  int paraphrase() {
    bind();
    const Mode mode = parse_mode(o_.mode, false);
    std::string text;
    const auto lines = prompts();
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const GenerationResult r = decode(mode, encode_prompt(lines[i]));
      for (const auto& w : r.warnings) err_ << "prompt " << i << ": " << w << "\n";
      nlohmann::ordered_json j;
      j["original"] = lines[i];
      j["paraphrase"] = r.text;
      if (std::isfinite(r.target_perplexity)) {
        j["target_ppl"] = r.target_perplexity;
      } else {
        j["target_ppl"] = nullptr;
      }
      j["finish_reason"] = to_string(r.finish_reason);
      text += j.dump() + "\n";
    }
    emit(text);
    return kOk;
  }

  int eval() {
    bind();
    const Mode mode = parse_mode(o_.mode, true);
    const auto templates = read_templates(o_.templates);
    const auto dataset = read_dataset(o_.dataset);
    err_ << "note: labels ranked by mean per-token log-probability\n";
    if (models_.tar->vocabulary().bos_id()) {
      err_ << "note: prompt perplexity conditions on the model's BOS token\n";
    }
    std::string text(kReportHeader);
    text += "\n";
    for (std::size_t i = 0; i < templates.size(); ++i) {
      PromptTemplate tmpl = templates[i];
      if (mode != Mode::kOriginal) {
        const GenerationResult r = decode(mode, encode_prompt(tmpl.prompt_text));
        if (r.tokens.empty()) {
          err_ << "template " << i << ": empty paraphrase, keeping the original prompt\n";
        } else {
          tmpl.prompt_text = r.text;
        }
      }
      const EvalReport report =
          evaluate(*models_.tar, *models_.tokenizer, tmpl, dataset, o_.workers);
      for (const auto& w : report.warnings) err_ << "template " << i << ": " << w << "\n";
      const std::optional<double> alpha =
          mode == Mode::kEnsemble ? std::optional<double>(o_.alpha) : std::nullopt;
      text += report_csv_row(i, alpha, o_.mode, report) + "\n";
    }
    emit(text);
    return kOk;
  }

  int sweep_alpha() {
    bind();
    std::string text(kSweepHeader);
    text += "\n";
    const auto lines = prompts();
    if (lines.empty()) fail(ErrorKind::kInvalidInput, "no prompt given (--prompt or --input)");
    const EnsembleConfig base{0.0, o_.max_len, system_prompt_};
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto rows = ppldecode::sweep_alpha(*models_.para, *models_.tar,
                                               encode_prompt(lines[i]), o_.alphas, base, {},
                                               lines[i], models_.tokenizer.get());
      for (const auto& row : rows) text += sweep_csv_row(i, row) + "\n";
    }
    emit(text);
    return kOk;
  }

  int scatter() {
    bind();
    std::vector<TokenSeq> encoded;
    for (const auto& line : prompts()) encoded.push_back(encode_prompt(line));
    const ScatterExport ex = scatter_export(*models_.para, *models_.tar, encoded,
                                            {o_.max_len, system_prompt_},
                                            models_.tokenizer.get());
    std::vector<double> xs, ys;
    for (const auto& row : ex.rows) {
      xs.push_back(row.ppl_as_output);
      ys.push_back(row.ppl_as_input);
    }
    err_ << "scatter: " << ex.rows.size() << " rows, " << ex.skipped.size()
         << " skipped (empty paraphrase), spearman_rho=" << format_real(spearman(xs, ys))
         << "\n";
    emit(scatter_csv(ex));
    return kOk;
  }

  int oracle_check() {
    std::size_t cases = 0;
    std::size_t mismatches = 0;
    auto check = [&](const LanguageModel& para, const LanguageModel& tar, const TokenSeq& ori,
                     int k, int width, const std::string& label) {
      const SearchConfig cfg{k, width, o_.oracle_max_len, {}};
      ++cases;
      const auto fast = decode_search(para, tar, ori, cfg);
      const auto ref = brute_force_reference(para, tar, ori, cfg);
      if (!identical(fast, ref)) {
        ++mismatches;
        err_ << "mismatch: " << label << " k=" << k << "\n";
      }
      if (k == 1 && width == 1) {
        ++cases;
        if (!identical(fast, decode_greedy(para, tar, ori, {o_.oracle_max_len, {}}))) {
          ++mismatches;
          err_ << "mismatch vs greedy: " << label << "\n";
        }
      }
    };

    const TableLM hand_para = fixtures::hand_paraphrase();
    const TableLM hand_tar = fixtures::hand_target();
    for (int k = 1; k <= 3; ++k) check(hand_para, hand_tar, {0}, k, k, "hand fixture");

    for (int p = 0; p < o_.pairs; ++p) {
      const std::uint64_t s = o_.seed + static_cast<std::uint64_t>(p);
      const TableLM para = random_table_lm(2 * s, o_.vocab_size, o_.order);
      const TableLM tar = random_table_lm(2 * s + 1, o_.vocab_size, o_.order);
      std::mt19937_64 rng(s);
      std::uniform_int_distribution<TokenId> tok(0, o_.vocab_size - 2);
      TokenSeq ori(1 + s % 3);
      for (auto& id : ori) id = tok(rng);
      for (int k = 1; k <= 3; ++k) check(para, tar, ori, k, k, "pair seed " + std::to_string(s));
      check(para, tar, ori, 1, 1, "pair seed " + std::to_string(s));
    }
    out_ << "oracle-check: " << cases << " cases, " << mismatches << " mismatches\n";
    return mismatches == 0 ? kOk : kOracleMismatch;
  }

 private:
  Options o_;
  std::ostream& out_;
  std::ostream& err_;
  ModelBinding models_;
  TokenSeq system_prompt_;
};

inline int run(std::vector<std::string> args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Perplexity-constrained prompt paraphrasing"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);

  auto add_models = [&](CLI::App* sub) {
    sub->add_option("--para-model", o.para_model,
                    "fixture:<path> | ngram:<corpus>:<order>:<alpha> | http:<url>")
        ->required();
    sub->add_option("--tar-model", o.tar_model, "target model binding (default: --para-model)");
    sub->add_option("--max-len", o.max_len, "maximum generated tokens")
        ->check(CLI::PositiveNumber);
    sub->add_option("--system-prompt", o.system_prompt, "paraphrase instruction text");
    sub->add_option("--output", o.output, "output path (default stdout)");
    sub->add_option("--timeout-ms", o.timeout_ms, "remote request timeout");
    sub->add_option("--retries", o.retries, "remote transport retries");
  };
  auto add_decoder = [&](CLI::App* sub, bool allow_original) {
    sub->add_option("--mode", o.mode,
                    allow_original ? "original|greedy|ensemble|search" : "greedy|ensemble|search");
    sub->add_option("--alpha", o.alpha, "target weight (ensemble only)")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--k", o.k, "beam width (search only)")->check(CLI::PositiveNumber);
    sub->add_option("--expand-width", o.expand_width, "proposals per candidate (search only)")
        ->check(CLI::PositiveNumber);
  };

  auto* para = app.add_subcommand("paraphrase", "paraphrase prompts into JSON lines");
  add_models(para);
  add_decoder(para, false);
  para->add_option("--input", o.input, "prompts, one per line")->required();

  auto* eval = app.add_subcommand("eval", "accuracy and prompt perplexity report (CSV)");
  add_models(eval);
  add_decoder(eval, true);
  eval->add_option("--templates", o.templates, "templates JSON lines")->required();
  eval->add_option("--dataset", o.dataset, "dataset JSON lines")->required();
  eval->add_option("--workers", o.workers, "parallel evaluation workers")
      ->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep-alpha", "ensemble decoding across alphas (CSV)");
  add_models(sweep);
  sweep->add_option("--alphas", o.alphas, "comma-separated alphas")
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));
  sweep->add_option("--prompt", o.prompt, "prompt text");
  sweep->add_option("--input", o.input, "prompts, one per line");

  auto* scatter = app.add_subcommand("scatter", "paraphrase perplexity scatter (CSV)");
  add_models(scatter);
  scatter->add_option("--input", o.input, "prompts, one per line")->required();

  auto* oracle = app.add_subcommand("oracle-check", "search decoder vs brute-force reference");
  oracle->add_option("--pairs", o.pairs, "random model pairs")->check(CLI::NonNegativeNumber);
  oracle->add_option("--vocab-size", o.vocab_size, "vocabulary size of random pairs")
      ->check(CLI::Range(2, kOracleMaxVocab));
  oracle->add_option("--order", o.order, "context order of random pairs")
      ->check(CLI::Range(0, 3));
  oracle->add_option("--max-len", o.oracle_max_len, "search length")->check(CLI::Range(1, kOracleMaxLen));
  oracle->add_option("--seed", o.seed, "seed of the first random pair");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
    auto require_mode = [&](CLI::App* sub, const char* flag, const char* mode) {
      if (sub->count(flag) > 0 && o.mode != mode) {
        throw CLI::ValidationError(flag, std::string("only valid with --mode ") + mode);
      }
    };
    for (CLI::App* sub : {para, eval}) {
      if (!sub->parsed()) continue;
      require_mode(sub, "--alpha", "ensemble");
      require_mode(sub, "--k", "search");
      require_mode(sub, "--expand-width", "search");
      parse_mode(o.mode, sub == eval);
    }
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  Runner runner(o, out, err);
  try {
    if (para->parsed()) return runner.paraphrase();
    if (eval->parsed()) return runner.eval();
    if (sweep->parsed()) return runner.sweep_alpha();
    if (scatter->parsed()) return runner.scatter();
    if (oracle->parsed()) return runner.oracle_check();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace ppldecode::cli
