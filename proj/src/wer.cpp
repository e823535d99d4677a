// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "soupforge/wer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "soupforge/error.hpp"

namespace soupforge {

namespace {

using nlohmann::json;

std::string format_edge(double v) {
    char buf[32];
    if (v == static_cast<std::uint64_t>(v)) {
        std::snprintf(buf, sizeof(buf), "%llu", static_cast<unsigned long long>(v));
    } else {
        std::snprintf(buf, sizeof(buf), "%g", v);
    }
    return buf;
}

std::string format_pct(std::optional<double> wer) {
    if (!wer) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *wer * 100.0);
    return buf;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, const TokenizeOptions& options) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) {
            std::string_view tok = text.substr(i, j - i);
            while (!tok.empty() && options.strip_chars.find(tok.front()) != std::string::npos) {
                tok.remove_prefix(1);
            }
            while (!tok.empty() && options.strip_chars.find(tok.back()) != std::string::npos) {
                tok.remove_suffix(1);
            }
            if (!tok.empty()) {
                std::string lowered(tok);
                for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                tokens.push_back(std::move(lowered));
            }
        }
        i = j;
    }
    return tokens;
}

std::optional<double> AlignmentStats::wer() const {
    if (ref_len() == 0) return std::nullopt;
    return static_cast<double>(edit_distance()) / static_cast<double>(ref_len());
}

AlignmentStats& AlignmentStats::operator+=(const AlignmentStats& other) {
    substitutions += other.substitutions;
    deletions += other.deletions;
    insertions += other.insertions;
    correct += other.correct;
    return *this;
}

AlignmentStats align(std::span<const std::string> ref, std::span<const std::string> hyp) {
    const std::size_t m = ref.size();
    const std::size_t n = hyp.size();

    // full DP matrix kept for the backtrace; utterance-sized inputs only
    std::vector<std::uint32_t> d((m + 1) * (n + 1));
    const auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return d[i * (n + 1) + j]; };

    for (std::size_t i = 0; i <= m; ++i) at(i, 0) = static_cast<std::uint32_t>(i);
    for (std::size_t j = 0; j <= n; ++j) at(0, j) = static_cast<std::uint32_t>(j);
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            const std::uint32_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            const std::uint32_t del = at(i - 1, j) + 1;
            const std::uint32_t ins = at(i, j - 1) + 1;
            at(i, j) = std::min({sub, del, ins});
        }
    }

    AlignmentStats stats;
    std::size_t i = m, j = n;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i, j) == at(i - 1, j - 1)) {
            ++stats.correct;
            --i;
            --j;
        } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
            ++stats.substitutions;
            --i;
            --j;
        } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            ++stats.deletions;
            --i;
        } else {
            ++stats.insertions;
            --j;
        }
    }
    return stats;
}

std::string WerBucket::label() const {
    std::string out = "t ∈ ";
    out += (lower_s == 0.0) ? "[" : "(";
    out += format_edge(lower_s);
    out += ", ";
    out += upper_s ? format_edge(*upper_s) + "]" : "∞)";
    return out;
}

std::vector<double> default_bucket_edges() { return {5.0, 30.0}; }

WerReport corpus_wer(std::span<const Utterance> utterances,
                     const std::optional<std::vector<double>>& bucket_edges,
                     const TokenizeOptions& options) {
    WerReport report;

    if (bucket_edges) {
        if (bucket_edges->empty()) {
            throw Error(Errc::invalid_buckets, "bucket edges must be non-empty");
        }
        double prev = 0.0;
        for (double e : *bucket_edges) {
            if (!(e > prev) || !std::isfinite(e)) {
                throw Error(Errc::invalid_buckets, "bucket edges must be strictly increasing and positive");
            }
            prev = e;
        }
        for (std::size_t b = 0; b <= bucket_edges->size(); ++b) {
            WerBucket bucket;
            bucket.lower_s = (b == 0) ? 0.0 : (*bucket_edges)[b - 1];
            if (b < bucket_edges->size()) bucket.upper_s = (*bucket_edges)[b];
            report.buckets.push_back(std::move(bucket));
        }
    }

    std::set<std::string_view> ids;
    for (const Utterance& utt : utterances) {
        if (!ids.insert(utt.id).second) {
            throw Error(Errc::duplicate_utterance, "duplicate utterance id '" + utt.id + "'");
        }
        const AlignmentStats stats =
            align(tokenize(utt.reference, options), tokenize(utt.hypothesis, options));
        report.overall += stats;
        ++report.utterances;
        if (bucket_edges) {
            if (!utt.duration_s) {
                throw Error(Errc::missing_duration,
                            "utterance '" + utt.id + "' has no duration but buckets were requested");
            }
            const double t = *utt.duration_s;
            std::size_t b = 0;
            while (b + 1 < report.buckets.size() && t > *report.buckets[b].upper_s) ++b;
            report.buckets[b].stats += stats;
            ++report.buckets[b].utterances;
        }
    }
    return report;
}

std::vector<Utterance> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open corpus '" + path.string() + "'");
    std::vector<Utterance> utts;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "corpus line " + std::to_string(line_no);
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(Errc::invalid_corpus, where + ": " + e.what());
        }
        if (!obj.is_object()) throw Error(Errc::invalid_corpus, where + ": not a JSON object");
        Utterance utt;
        for (const auto& [key, value] : obj.items()) {
            if (key == "id") {
                if (!value.is_string()) throw Error(Errc::invalid_corpus, where + ": id must be a string");
                utt.id = value.get<std::string>();
            } else if (key == "ref") {
                if (!value.is_string()) throw Error(Errc::invalid_corpus, where + ": ref must be a string");
                utt.reference = value.get<std::string>();
            } else if (key == "hyp") {
                if (!value.is_string()) throw Error(Errc::invalid_corpus, where + ": hyp must be a string");
                utt.hypothesis = value.get<std::string>();
            } else if (key == "duration_s") {
                if (!value.is_number() || value.get<double>() < 0.0) {
                    throw Error(Errc::invalid_corpus, where + ": duration_s must be a non-negative number");
                }
                utt.duration_s = value.get<double>();
            } else {
                throw Error(Errc::invalid_corpus, where + ": unknown key '" + key + "'");
            }
        }
        if (!obj.contains("id")) throw Error(Errc::invalid_corpus, where + ": missing id");
        if (!obj.contains("ref")) throw Error(Errc::invalid_corpus, where + ": missing ref");
        if (!obj.contains("hyp")) throw Error(Errc::invalid_corpus, where + ": missing hyp");
        utts.push_back(std::move(utt));
    }
    return utts;
}

std::string format_report(const WerReport& report) {
    // pad labels by code points, not bytes: bucket labels carry UTF-8 symbols
    const auto pad_label = [](const std::string& s) {
        std::size_t points = 0;
        for (const char c : s) {
            if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++points;
        }
        return s + std::string(points < 14 ? 14 - points : 1, ' ');
    };
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%8s %8s %8s %8s %8s %8s %8s\n", "WER%", "sub", "del",
                  "ins", "corr", "ref", "utts");
    out << pad_label("") << line;
    const auto row = [&](const std::string& label, const AlignmentStats& s, std::uint64_t utts) {
        std::snprintf(line, sizeof(line), "%8s %8llu %8llu %8llu %8llu %8llu %8llu\n",
                      format_pct(s.wer()).c_str(),
                      static_cast<unsigned long long>(s.substitutions),
                      static_cast<unsigned long long>(s.deletions),
                      static_cast<unsigned long long>(s.insertions),
                      static_cast<unsigned long long>(s.correct),
                      static_cast<unsigned long long>(s.ref_len()),
                      static_cast<unsigned long long>(utts));
        out << pad_label(label) << line;
    };
    row("All audios", report.overall, report.utterances);
    for (const WerBucket& b : report.buckets) row(b.label(), b.stats, b.utterances);
    return out.str();
}

namespace {

json stats_to_json(const AlignmentStats& s) {
    json j;
    j["substitutions"] = s.substitutions;
    j["deletions"] = s.deletions;
    j["insertions"] = s.insertions;
    j["correct"] = s.correct;
    j["ref_len"] = s.ref_len();
    if (auto w = s.wer()) {
        j["wer"] = *w;
    } else {
        j["wer"] = nullptr;
    }
    return j;
}

}  // namespace

json report_to_json(const WerReport& report) {
    json j;
    j["overall"] = stats_to_json(report.overall);
    j["utterances"] = report.utterances;
    j["buckets"] = json::array();
    for (const WerBucket& b : report.buckets) {
        json jb = stats_to_json(b.stats);
        jb["lower_s"] = b.lower_s;
        if (b.upper_s) {
            jb["upper_s"] = *b.upper_s;
        } else {
            jb["upper_s"] = nullptr;
        }
        jb["label"] = b.label();
        jb["utterances"] = b.utterances;
        j["buckets"].push_back(std::move(jb));
    }
    return j;
}

}  // namespace soupforge
