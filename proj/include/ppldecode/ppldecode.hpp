#pragma once

// SPDX-License-Identifier: Apache-2.0

#include "ppldecode/decode_ensemble.hpp"
#include "ppldecode/decode_search.hpp"
#include "ppldecode/error.hpp"
#include "ppldecode/eval_harness.hpp"
#include "ppldecode/generation.hpp"
#include "ppldecode/language_model.hpp"
#include "ppldecode/tokenizer.hpp"
#include "ppldecode/toy_models.hpp"
#include "ppldecode/vocabulary.hpp"
