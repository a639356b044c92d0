#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "kspace/schema.hpp"

namespace kspace {

// Timestamp sentinel for rows/edges with no time ("static": always admissible).
constexpr int64_t kStaticTime = std::numeric_limits<int64_t>::min();

// Epoch seconds from "<int>", "YYYY-MM-DD", or "YYYY-MM-DD[ T]HH:MM:SS" (UTC).
int64_t parse_timestamp(const std::string& s);

struct ColumnData {
    ColumnKind kind = ColumnKind::kNumeric;
    std::vector<double> nums;         // numeric (NaN = missing)
    std::vector<std::string> strs;    // categorical / key values ("" = missing)
    std::vector<int64_t> times;       // timestamps (kStaticTime = missing)
    std::vector<int64_t> refs;        // resolved foreign keys (-1 = null/dangling)
    std::vector<std::string> vocab;   // categorical distinct values, sorted
};

struct TableData {
    std::string name;
    int64_t n_rows = 0;
    std::vector<ColumnData> cols;  // aligned with the manifest column list

    const ColumnData& column(const TableSpec& spec, const std::string& name) const;
};

// Typed column stores for every table, with foreign keys resolved to row
// indices and timestamps parsed to epoch seconds.
struct RelationalBundle {
    SchemaManifest manifest;
    std::vector<TableData> tables;
    std::vector<std::string> warnings;  // dangling FK reports etc.

    const TableData& table(const std::string& name) const;
    int64_t rows(int64_t table_idx) const { return tables[static_cast<size_t>(table_idx)].n_rows; }

    std::vector<int> task_labels(const std::string& task) const;     // 0/1 per target-table row
    std::vector<int64_t> task_times(const std::string& task) const;  // epoch seconds per row
};

// Loads every table CSV named by the manifest (paths relative to
// `base_dir`), builds vocabularies, parses timestamps, and resolves foreign
// keys. Dangling foreign keys are dropped with a warning; structural
// problems (missing column, unparsable timestamp, non-binary label) throw.
RelationalBundle ingest(const SchemaManifest& manifest, const std::string& base_dir);

}  // namespace kspace
