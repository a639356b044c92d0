#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace kspace {

enum class ColumnKind { kNumeric, kCategorical, kTimestamp, kPrimaryKey, kForeignKey };

std::string to_string(ColumnKind k);
ColumnKind column_kind_from_string(const std::string& s);

struct ColumnSpec {
    std::string name;
    ColumnKind kind = ColumnKind::kNumeric;
    std::string target_table;  // foreign keys only
};

struct TableSpec {
    std::string name;
    std::string file;  // CSV path relative to the manifest
    std::vector<ColumnSpec> columns;

    const ColumnSpec* find_column(const std::string& name) const;
    std::string primary_key() const;
    std::optional<std::string> timestamp_column() const;  // at most one
};

struct TaskSpec {
    std::string name;
    std::string table;
    std::string label_column;
    std::string time_column;
};

// The relational schema plus task annotations. Parsed from JSON; the document
// layout is described in docs/manifest.schema.json.
struct SchemaManifest {
    std::string database;
    std::vector<TableSpec> tables;
    std::vector<TaskSpec> tasks;

    int64_t table_index(const std::string& name) const;  // -1 if absent
    const TaskSpec* find_task(const std::string& name) const;
    bool is_task_label_column(const std::string& table, const std::string& column) const;

    nlohmann::json to_json() const;
    static SchemaManifest from_json(const nlohmann::json& j);
    static SchemaManifest load(const std::string& path);
    void save(const std::string& path) const;

    // Structural validation; throws ConfigError naming the offending field.
    void validate() const;

    // Digest of the canonical JSON form; seeds the frozen encoder projections
    // and keys feature caches.
    uint64_t digest() const;
};

}  // namespace kspace
