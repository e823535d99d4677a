// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

namespace soupforge {

struct NormConfig {
    std::set<std::string> filler_lexicon = {"uh", "um", "er", "ah", "eh", "hmm", "mm"};
    char spell_separator_in = '-';
    char spell_separator_out = '~';
    bool number_rewrite = true;
    bool filler_bracketing = true;
    bool lowercase_fillers = false;  // default preserves the token's case inside brackets

    void validate() const;
};

NormConfig norm_config_from_json(const nlohmann::json& j);

/// Transcript post-processing, applied token-wise in a fixed order:
///   1. spelled words: a token of single letters joined by the in-separator
///      ("A-B-C") has the separator rewritten ("A~B~C");
///   2. numbers: a token of decimal digits (thousands commas allowed) below
///      10^15 becomes lowercase cardinal words;
///   3. fillers: a token whose lowercase form is in the lexicon is wrapped
///      in brackets unless already bracketed.
/// Tokens are joined with single spaces. Idempotent.
std::string normalize(std::string_view text, const NormConfig& config = {});

/// Lowercase English cardinal, space-separated, no "and", no hyphens
/// ("twenty one"). Domain: n < 10^15.
std::string number_to_words(std::uint64_t n);

}  // namespace soupforge
