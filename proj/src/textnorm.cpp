// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "soupforge/textnorm.hpp"

#include <cctype>
#include <charconv>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "soupforge/error.hpp"

namespace soupforge {

namespace {

constexpr std::uint64_t kNumberLimit = 1000000000000000ull;  // 10^15

const char* kOnes[] = {"zero",    "one",     "two",       "three",    "four",
                       "five",    "six",     "seven",     "eight",    "nine",
                       "ten",     "eleven",  "twelve",    "thirteen", "fourteen",
                       "fifteen", "sixteen", "seventeen", "eighteen", "nineteen"};
const char* kTens[] = {"", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy",
                       "eighty", "ninety"};
const char* kScales[] = {"", "thousand", "million", "billion", "trillion"};

void append_word(std::string& out, std::string_view word) {
    if (!out.empty()) out += ' ';
    out += word;
}

void append_below_thousand(std::string& out, std::uint64_t n) {
    if (n >= 100) {
        append_word(out, kOnes[n / 100]);
        append_word(out, "hundred");
        n %= 100;
    }
    if (n >= 20) {
        append_word(out, kTens[n / 10]);
        n %= 10;
        if (n > 0) append_word(out, kOnes[n]);
    } else if (n > 0) {
        append_word(out, kOnes[n]);
    }
}

bool is_ascii_letter(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) != 0;
}

bool is_digit(char c) {
    return std::isdigit(static_cast<unsigned char>(c)) != 0;
}

/// single-letter (sep single-letter)+
bool is_spelled_word(std::string_view tok, char sep) {
    if (tok.size() < 3 || tok.size() % 2 == 0) return false;
    for (std::size_t i = 0; i < tok.size(); ++i) {
        if (i % 2 == 0) {
            if (!is_ascii_letter(tok[i])) return false;
        } else if (tok[i] != sep) {
            return false;
        }
    }
    return true;
}

/// "123" or "1,234,567" -> numeric value; nullopt if the token is not a
/// well-formed number (or overflows the supported range).
std::optional<std::uint64_t> parse_number_token(std::string_view tok) {
    if (tok.empty()) return std::nullopt;
    std::string digits;
    if (tok.find(',') != std::string_view::npos) {
        // thousands grouping: 1-3 digits, then comma + exactly 3 digits each
        std::size_t i = 0;
        while (i < tok.size() && is_digit(tok[i])) ++i;
        if (i == 0 || i > 3) return std::nullopt;
        digits.assign(tok.substr(0, i));
        while (i < tok.size()) {
            if (tok[i] != ',' || tok.size() - i < 4) return std::nullopt;
            for (std::size_t k = i + 1; k < i + 4; ++k) {
                if (!is_digit(tok[k])) return std::nullopt;
            }
            digits.append(tok.substr(i + 1, 3));
            i += 4;
        }
    } else {
        for (char c : tok) {
            if (!is_digit(c)) return std::nullopt;
        }
        digits.assign(tok);
    }
    // strip leading zeros for overflow-safe parsing; keep one digit
    std::size_t nz = digits.find_first_not_of('0');
    if (nz == std::string::npos) nz = digits.size() - 1;
    const std::string_view significant = std::string_view(digits).substr(nz);
    if (significant.size() > 15) return std::nullopt;  // out of the supported range
    std::uint64_t value = 0;
    std::from_chars(significant.data(), significant.data() + significant.size(), value);
    if (value >= kNumberLimit) return std::nullopt;
    return value;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

void NormConfig::validate() const {
    if (filler_bracketing && filler_lexicon.empty()) {
        throw Error(Errc::invalid_argument, "filler bracketing enabled with an empty lexicon");
    }
    if (spell_separator_in == spell_separator_out) {
        throw Error(Errc::invalid_argument, "spell separators must differ");
    }
}

NormConfig norm_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(Errc::invalid_argument, "normalization config must be an object");
    NormConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "filler_lexicon") {
            if (!value.is_array()) {
                throw Error(Errc::invalid_argument, "filler_lexicon must be an array of strings");
            }
            cfg.filler_lexicon.clear();
            for (const auto& w : value) {
                if (!w.is_string()) {
                    throw Error(Errc::invalid_argument, "filler_lexicon must be an array of strings");
                }
                cfg.filler_lexicon.insert(to_lower(w.get<std::string>()));
            }
        } else if (key == "spell_separator_in" || key == "spell_separator_out") {
            if (!value.is_string() || value.get<std::string>().size() != 1) {
                throw Error(Errc::invalid_argument, key + " must be a single character");
            }
            (key == "spell_separator_in" ? cfg.spell_separator_in : cfg.spell_separator_out) =
                value.get<std::string>()[0];
        } else if (key == "number_rewrite") {
            if (!value.is_boolean()) throw Error(Errc::invalid_argument, key + " must be a boolean");
            cfg.number_rewrite = value.get<bool>();
        } else if (key == "filler_bracketing") {
            if (!value.is_boolean()) throw Error(Errc::invalid_argument, key + " must be a boolean");
            cfg.filler_bracketing = value.get<bool>();
        } else if (key == "lowercase_fillers") {
            if (!value.is_boolean()) throw Error(Errc::invalid_argument, key + " must be a boolean");
            cfg.lowercase_fillers = value.get<bool>();
        } else {
            throw Error(Errc::invalid_argument, "unknown normalization config key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

std::string number_to_words(std::uint64_t n) {
    if (n >= kNumberLimit) {
        throw Error(Errc::out_of_range, "number " + std::to_string(n) + " is out of range (< 10^15)");
    }
    if (n == 0) return "zero";

    // split into thousands groups, most significant first
    std::uint64_t groups[5] = {0, 0, 0, 0, 0};
    int count = 0;
    while (n > 0) {
        groups[count++] = n % 1000;
        n /= 1000;
    }
    std::string out;
    for (int g = count - 1; g >= 0; --g) {
        if (groups[g] == 0) continue;
        append_below_thousand(out, groups[g]);
        if (g > 0) append_word(out, kScales[g]);
    }
    return out;
}

std::string normalize(std::string_view text, const NormConfig& config) {
    config.validate();

    std::vector<std::string> out_tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) {
            std::string tok(text.substr(i, j - i));

            // 1. spelled-word separator rewrite
            if (is_spelled_word(tok, config.spell_separator_in)) {
                for (std::size_t k = 1; k < tok.size(); k += 2) tok[k] = config.spell_separator_out;
            }

            // 2. number rewrite (may expand into several tokens)
            bool expanded = false;
            if (config.number_rewrite) {
                if (const auto value = parse_number_token(tok)) {
                    const std::string words = number_to_words(*value);
                    std::size_t start = 0;
                    while (start < words.size()) {
                        std::size_t space = words.find(' ', start);
                        if (space == std::string::npos) space = words.size();
                        out_tokens.emplace_back(words.substr(start, space - start));
                        start = space + 1;
                    }
                    expanded = true;
                }
            }

            if (!expanded) out_tokens.push_back(std::move(tok));
        }
        i = j;
    }

    // 3. filler bracketing over the final token stream
    if (config.filler_bracketing) {
        for (std::string& tok : out_tokens) {
            if (tok.size() >= 2 && tok.front() == '[' && tok.back() == ']') continue;
            if (config.filler_lexicon.contains(to_lower(tok))) {
                tok = "[" + (config.lowercase_fillers ? to_lower(tok) : tok) + "]";
            }
        }
    }

    std::string out;
    for (std::size_t k = 0; k < out_tokens.size(); ++k) {
        if (k > 0) out += ' ';
        out += out_tokens[k];
    }
    return out;
}

}  // namespace soupforge
