#pragma once

// SPDX-License-Identifier: Apache-2.0

// Small hand-checkable model pair over {a, b, c, eos}. Both models ignore
// context, so every step's distribution is the listed row.

#include "ppldecode/toy_models.hpp"

namespace ppldecode::fixtures {

inline Vocabulary abc_vocabulary() { return Vocabulary({"a", "b", "c", "eos"}, 3); }

inline TableLM unconditional(std::vector<double> probs) {
  return TableLM(abc_vocabulary(), 0, {}, detail::to_log_row(probs, 1e-9, "<default>"));
}

/// P_para = {a: .5, b: .3, c: .15, eos: .05}
inline TableLM hand_paraphrase() { return unconditional({0.5, 0.3, 0.15, 0.05}); }

/// P_tar = {a: .1, b: .6, c: .2, eos: .1}
inline TableLM hand_target() { return unconditional({0.1, 0.6, 0.2, 0.1}); }

}  // namespace ppldecode::fixtures
