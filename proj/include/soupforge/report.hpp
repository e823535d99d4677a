// Copyright 2026 The SoupForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "soupforge/selective.hpp"

namespace soupforge {

struct CurvePoint {
    std::size_t k = 0;  // number of merged models
    double wer = 0.0;
    std::optional<double> individual_wer;  // the k-th model scored alone
};

struct CurveResult {
    std::vector<CurvePoint> points;
    std::optional<std::string> aborted;  // oracle failure message; points hold the partial curve
};

struct CurveOptions {
    bool individuals = false;  // also score each model alone (2n-1 oracle calls total)
    std::filesystem::path scratch_dir;  // empty -> default_scratch_dir()
};

/// Score the uniform merge of the first k candidates for k = 1..n. With
/// `individuals`, each candidate is additionally scored alone; the k = 1
/// merge doubles as the first model's individual score, so the total is
/// 2n-1 oracle calls instead of 2n. Oracle failure stops the sweep and
/// returns everything gathered so far.
CurveResult merge_curve(std::span<const std::string> candidate_paths, Oracle& oracle,
                        const CurveOptions& options = {});

nlohmann::json curve_to_json(const CurveResult& curve);

// ---------------------------------------------------------------------------
// Fixture tables

/// How bold (best-result) marks are assigned when rendering.
enum class BoldRule {
    none,
    column_best,  // per column, direction given by TableColumn::best; ties all bold
    row_min,      // per row, minimum over numeric cells; ties all bold
};

struct TableColumn {
    std::string header;
    enum class Best { none, min, max } best = Best::none;
};

struct TableRow {
    std::string label;
    std::vector<std::optional<std::string>> cells;  // nullopt renders as "/"
};

struct TableDocument {
    std::string title;
    std::string label_header;
    BoldRule bold_rule = BoldRule::none;
    std::vector<TableColumn> columns;
    std::vector<TableRow> rows;
};

TableDocument load_table_fixture(const nlohmann::json& j);
TableDocument load_table_fixture_file(const std::filesystem::path& path);

/// Deterministic markdown rendering; missing cells are "/", best cells are
/// wrapped in "**".
std::string render_table_markdown(const TableDocument& table);
nlohmann::json render_table_json(const TableDocument& table);

/// Bold mask as computed by the active rule (exposed for property checks).
std::vector<std::vector<bool>> compute_bold_mask(const TableDocument& table);

}  // namespace soupforge
