// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace soupforge::test {

/// Memoized recursive minimum edit distance under unit costs. Reference for
/// the production alignment; shares no code with it.
class EditDistanceOracle {
public:
    EditDistanceOracle(std::span<const std::string> ref, std::span<const std::string> hyp)
        : ref_(ref), hyp_(hyp), memo_((ref.size() + 1) * (hyp.size() + 1), kUnset) {}

    std::uint64_t distance() { return solve(ref_.size(), hyp_.size()); }

private:
    static constexpr std::uint64_t kUnset = ~0ull;

    std::uint64_t solve(std::size_t i, std::size_t j) {
        if (i == 0) return j;
        if (j == 0) return i;
        std::uint64_t& slot = memo_[i * (hyp_.size() + 1) + j];
        if (slot != kUnset) return slot;
        const std::uint64_t sub = solve(i - 1, j - 1) + (ref_[i - 1] == hyp_[j - 1] ? 0 : 1);
        const std::uint64_t del = solve(i - 1, j) + 1;
        const std::uint64_t ins = solve(i, j - 1) + 1;
        return slot = std::min({sub, del, ins});
    }

    std::span<const std::string> ref_;
    std::span<const std::string> hyp_;
    std::vector<std::uint64_t> memo_;
};

inline std::uint64_t oracle_edit_distance(std::span<const std::string> ref,
                                          std::span<const std::string> hyp) {
    return EditDistanceOracle(ref, hyp).distance();
}

/// All token sequences up to `max_len` over the given alphabet.
inline std::vector<std::vector<std::string>> all_sequences(std::span<const std::string> alphabet,
                                                           std::size_t max_len) {
    std::vector<std::vector<std::string>> out = {{}};
    std::size_t level_begin = 0;
    for (std::size_t len = 1; len <= max_len; ++len) {
        const std::size_t level_end = out.size();
        for (std::size_t i = level_begin; i < level_end; ++i) {
            for (const std::string& sym : alphabet) {
                auto seq = out[i];
                seq.push_back(sym);
                out.push_back(std::move(seq));
            }
        }
        level_begin = level_end;
    }
    return out;
}

}  // namespace soupforge::test
