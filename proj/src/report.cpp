// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "soupforge/report.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "soupforge/error.hpp"

namespace soupforge {

namespace {

using nlohmann::json;

struct ScratchDir {
    std::filesystem::path dir;

    explicit ScratchDir(const std::filesystem::path& root) {
        std::random_device rd;
        dir = root / ("curve-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(dir);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
};

}  // namespace

CurveResult merge_curve(std::span<const std::string> candidate_paths, Oracle& oracle,
                        const CurveOptions& options) {
    if (candidate_paths.empty()) {
        throw Error(Errc::invalid_argument, "merge curve needs at least one candidate");
    }
    ScratchDir scratch(options.scratch_dir.empty() ? default_scratch_dir() : options.scratch_dir);
    const std::filesystem::path merged = scratch.dir / "prefix.ckpt";

    CurveResult result;
    for (std::size_t k = 1; k <= candidate_paths.size(); ++k) {
        CurvePoint point;
        point.k = k;
        try {
            MergePlan plan = MergePlan::uniform(
                {candidate_paths.begin(), candidate_paths.begin() + static_cast<std::ptrdiff_t>(k)});
            weighted_merge(plan, merged);
            point.wer = oracle.score(merged);
            if (options.individuals) {
                // the k = 1 merge IS model 1 alone; later models are scored directly
                point.individual_wer =
                    (k == 1) ? point.wer : oracle.score(candidate_paths[k - 1]);
            }
        } catch (const Error& e) {
            result.aborted = e.what();
            return result;
        }
        result.points.push_back(point);
    }
    return result;
}

json curve_to_json(const CurveResult& curve) {
    json j;
    j["points"] = json::array();
    for (const CurvePoint& p : curve.points) {
        json jp;
        jp["k"] = p.k;
        jp["wer"] = p.wer;
        if (p.individual_wer) {
            jp["individual_wer"] = *p.individual_wer;
        }
        j["points"].push_back(std::move(jp));
    }
    if (curve.aborted) {
        j["aborted"] = *curve.aborted;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Tables

namespace {

std::optional<double> cell_value(const std::optional<std::string>& cell) {
    if (!cell) return std::nullopt;
    double v = 0.0;
    const char* begin = cell->data();
    const char* end = begin + cell->size();
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) return std::nullopt;
    return v;
}

TableColumn::Best best_from_string(const std::string& s) {
    if (s == "none") return TableColumn::Best::none;
    if (s == "min") return TableColumn::Best::min;
    if (s == "max") return TableColumn::Best::max;
    throw Error(Errc::invalid_argument, "column best must be none|min|max, got '" + s + "'");
}

BoldRule bold_rule_from_string(const std::string& s) {
    if (s == "none") return BoldRule::none;
    if (s == "column_best") return BoldRule::column_best;
    if (s == "row_min") return BoldRule::row_min;
    throw Error(Errc::invalid_argument, "bold rule must be none|column_best|row_min, got '" + s + "'");
}

}  // namespace

TableDocument load_table_fixture(const json& j) {
    if (!j.is_object()) throw Error(Errc::invalid_argument, "table fixture must be a JSON object");
    TableDocument table;
    if (j.contains("title")) table.title = j.at("title").get<std::string>();
    if (j.contains("label_header")) table.label_header = j.at("label_header").get<std::string>();
    if (j.contains("bold")) table.bold_rule = bold_rule_from_string(j.at("bold").get<std::string>());
    if (!j.contains("columns") || !j.at("columns").is_array()) {
        throw Error(Errc::invalid_argument, "table fixture needs a columns array");
    }
    for (const auto& col : j.at("columns")) {
        TableColumn c;
        if (col.is_string()) {
            c.header = col.get<std::string>();
        } else if (col.is_object()) {
            c.header = col.at("header").get<std::string>();
            if (col.contains("best")) c.best = best_from_string(col.at("best").get<std::string>());
        } else {
            throw Error(Errc::invalid_argument, "table column must be a string or object");
        }
        table.columns.push_back(std::move(c));
    }
    if (j.contains("rows")) {
        if (!j.at("rows").is_array()) throw Error(Errc::invalid_argument, "rows must be an array");
        for (const auto& row : j.at("rows")) {
            TableRow r;
            r.label = row.at("label").get<std::string>();
            if (row.contains("cells")) {
                for (const auto& cell : row.at("cells")) {
                    if (cell.is_null()) {
                        r.cells.emplace_back(std::nullopt);
                    } else if (cell.is_string()) {
                        r.cells.emplace_back(cell.get<std::string>());
                    } else if (cell.is_number()) {
                        // keep the fixture author's JSON text out of it: format plainly
                        r.cells.emplace_back(json(cell).dump());
                    } else {
                        throw Error(Errc::invalid_argument, "cells must be strings, numbers, or null");
                    }
                }
            }
            if (r.cells.size() != table.columns.size()) {
                throw Error(Errc::invalid_argument,
                            "row '" + r.label + "' has " + std::to_string(r.cells.size()) +
                                " cells for " + std::to_string(table.columns.size()) + " columns");
            }
            table.rows.push_back(std::move(r));
        }
    }
    return table;
}

TableDocument load_table_fixture_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open fixture '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, "fixture '" + path.string() + "': " + e.what());
    }
    return load_table_fixture(j);
}

std::vector<std::vector<bool>> compute_bold_mask(const TableDocument& table) {
    std::vector<std::vector<bool>> mask(table.rows.size(),
                                        std::vector<bool>(table.columns.size(), false));
    if (table.bold_rule == BoldRule::column_best) {
        for (std::size_t c = 0; c < table.columns.size(); ++c) {
            const TableColumn::Best dir = table.columns[c].best;
            if (dir == TableColumn::Best::none) continue;
            std::optional<double> best;
            for (const TableRow& row : table.rows) {
                const auto v = cell_value(row.cells[c]);
                if (!v) continue;
                if (!best || (dir == TableColumn::Best::min ? *v < *best : *v > *best)) best = *v;
            }
            if (!best) continue;
            for (std::size_t r = 0; r < table.rows.size(); ++r) {
                const auto v = cell_value(table.rows[r].cells[c]);
                if (v && *v == *best) mask[r][c] = true;
            }
        }
    } else if (table.bold_rule == BoldRule::row_min) {
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            std::optional<double> best;
            for (const auto& cell : table.rows[r].cells) {
                const auto v = cell_value(cell);
                if (v && (!best || *v < *best)) best = *v;
            }
            if (!best) continue;
            for (std::size_t c = 0; c < table.columns.size(); ++c) {
                const auto v = cell_value(table.rows[r].cells[c]);
                if (v && *v == *best) mask[r][c] = true;
            }
        }
    }
    return mask;
}

std::string render_table_markdown(const TableDocument& table) {
    const auto mask = compute_bold_mask(table);
    std::string out;
    if (!table.title.empty()) {
        out += "### " + table.title + "\n\n";
    }
    out += "| " + table.label_header + " |";
    for (const TableColumn& c : table.columns) out += " " + c.header + " |";
    out += "\n|";
    for (std::size_t c = 0; c <= table.columns.size(); ++c) out += " --- |";
    out += "\n";
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        out += "| " + table.rows[r].label + " |";
        for (std::size_t c = 0; c < table.columns.size(); ++c) {
            const auto& cell = table.rows[r].cells[c];
            std::string text = cell ? *cell : "/";
            if (cell && mask[r][c]) text = "**" + text + "**";
            out += " " + text + " |";
        }
        out += "\n";
    }
    return out;
}

json render_table_json(const TableDocument& table) {
    const auto mask = compute_bold_mask(table);
    json j;
    if (!table.title.empty()) j["title"] = table.title;
    j["columns"] = json::array();
    for (const TableColumn& c : table.columns) j["columns"].push_back(c.header);
    j["rows"] = json::array();
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        json row;
        row["label"] = table.rows[r].label;
        row["cells"] = json::array();
        for (std::size_t c = 0; c < table.columns.size(); ++c) {
            const auto& cell = table.rows[r].cells[c];
            if (!cell) {
                row["cells"].push_back(nullptr);
            } else {
                json jc;
                jc["text"] = *cell;
                jc["bold"] = static_cast<bool>(mask[r][c]);
                row["cells"].push_back(std::move(jc));
            }
        }
        j["rows"].push_back(std::move(row));
    }
    return j;
}

}  // namespace soupforge
