#include "kspace/schema.hpp"

#include <fstream>
#include <set>

#include "kspace/error.hpp"
#include "kspace/rng.hpp"

namespace kspace {

std::string to_string(ColumnKind k) {
    switch (k) {
        case ColumnKind::kNumeric: return "numeric";
        case ColumnKind::kCategorical: return "categorical";
        case ColumnKind::kTimestamp: return "timestamp";
        case ColumnKind::kPrimaryKey: return "primary_key";
        case ColumnKind::kForeignKey: return "foreign_key";
    }
    return "?";
}

ColumnKind column_kind_from_string(const std::string& s) {
    if (s == "numeric") return ColumnKind::kNumeric;
    if (s == "categorical") return ColumnKind::kCategorical;
    if (s == "timestamp") return ColumnKind::kTimestamp;
    if (s == "primary_key") return ColumnKind::kPrimaryKey;
    if (s == "foreign_key") return ColumnKind::kForeignKey;
    throw ConfigError("manifest: unknown column kind '" + s + "'");
}

const ColumnSpec* TableSpec::find_column(const std::string& n) const {
    for (const auto& c : columns)
        if (c.name == n) return &c;
    return nullptr;
}

std::string TableSpec::primary_key() const {
    for (const auto& c : columns)
        if (c.kind == ColumnKind::kPrimaryKey) return c.name;
    throw ConfigError("manifest: table '" + name + "' has no primary key");
}

std::optional<std::string> TableSpec::timestamp_column() const {
    for (const auto& c : columns)
        if (c.kind == ColumnKind::kTimestamp) return c.name;
    return std::nullopt;
}

int64_t SchemaManifest::table_index(const std::string& n) const {
    for (size_t i = 0; i < tables.size(); ++i)
        if (tables[i].name == n) return static_cast<int64_t>(i);
    return -1;
}

const TaskSpec* SchemaManifest::find_task(const std::string& n) const {
    for (const auto& t : tasks)
        if (t.name == n) return &t;
    return nullptr;
}

bool SchemaManifest::is_task_label_column(const std::string& table, const std::string& column) const {
    for (const auto& t : tasks)
        if (t.table == table && t.label_column == column) return true;
    return false;
}

nlohmann::json SchemaManifest::to_json() const {
    nlohmann::json jt = nlohmann::json::array();
    for (const auto& t : tables) {
        nlohmann::json cols = nlohmann::json::array();
        for (const auto& c : t.columns) {
            nlohmann::json jc = {{"name", c.name}, {"kind", to_string(c.kind)}};
            if (c.kind == ColumnKind::kForeignKey) jc["target"] = c.target_table;
            cols.push_back(jc);
        }
        jt.push_back({{"name", t.name}, {"file", t.file}, {"columns", cols}});
    }
    nlohmann::json jk = nlohmann::json::array();
    for (const auto& k : tasks)
        jk.push_back({{"name", k.name},
                      {"table", k.table},
                      {"label_column", k.label_column},
                      {"time_column", k.time_column}});
    return {{"version", 1}, {"database", database}, {"tables", jt}, {"tasks", jk}};
}

SchemaManifest SchemaManifest::from_json(const nlohmann::json& j) {
    SchemaManifest m;
    try {
        if (j.value("version", 0) != 1) throw ConfigError("manifest: version must be 1");
        m.database = j.at("database").get<std::string>();
        for (const auto& jt : j.at("tables")) {
            TableSpec t;
            t.name = jt.at("name").get<std::string>();
            t.file = jt.at("file").get<std::string>();
            for (const auto& jc : jt.at("columns")) {
                ColumnSpec c;
                c.name = jc.at("name").get<std::string>();
                c.kind = column_kind_from_string(jc.at("kind").get<std::string>());
                if (c.kind == ColumnKind::kForeignKey) c.target_table = jc.at("target").get<std::string>();
                t.columns.push_back(std::move(c));
            }
            m.tables.push_back(std::move(t));
        }
        for (const auto& jk : j.at("tasks")) {
            TaskSpec k;
            k.name = jk.at("name").get<std::string>();
            k.table = jk.at("table").get<std::string>();
            k.label_column = jk.at("label_column").get<std::string>();
            k.time_column = jk.at("time_column").get<std::string>();
            m.tasks.push_back(std::move(k));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    m.validate();
    return m;
}

SchemaManifest SchemaManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("manifest: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest: " + path + ": " + e.what());
    }
    return from_json(j);
}

void SchemaManifest::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("manifest: cannot open for write " + path);
    f << to_json().dump(2) << '\n';
}

void SchemaManifest::validate() const {
    if (database.empty()) throw ConfigError("manifest: database name is empty");
    if (tables.empty()) throw ConfigError("manifest: no tables");
    std::set<std::string> names;
    for (const auto& t : tables) {
        if (!names.insert(t.name).second) throw ConfigError("manifest: duplicate table '" + t.name + "'");
        int pk = 0;
        int ts = 0;
        std::set<std::string> cols;
        for (const auto& c : t.columns) {
            if (!cols.insert(c.name).second)
                throw ConfigError("manifest: tables." + t.name + ": duplicate column '" + c.name + "'");
            if (c.kind == ColumnKind::kPrimaryKey) ++pk;
            if (c.kind == ColumnKind::kTimestamp) ++ts;
            if (c.kind == ColumnKind::kForeignKey && table_index(c.target_table) < 0)
                throw ConfigError("manifest: tables." + t.name + "." + c.name + ": foreign key target '" +
                                  c.target_table + "' does not exist");
        }
        if (pk != 1)
            throw ConfigError("manifest: tables." + t.name + ": expected exactly one primary key, found " +
                              std::to_string(pk));
        if (ts > 1)
            throw ConfigError("manifest: tables." + t.name + ": at most one timestamp column supported");
    }
    std::set<std::string> task_names;
    for (const auto& k : tasks) {
        if (!task_names.insert(k.name).second) throw ConfigError("manifest: duplicate task '" + k.name + "'");
        const int64_t ti = table_index(k.table);
        if (ti < 0) throw ConfigError("manifest: tasks." + k.name + ": target table '" + k.table + "' missing");
        const TableSpec& t = tables[static_cast<size_t>(ti)];
        if (!t.find_column(k.label_column))
            throw ConfigError("manifest: tasks." + k.name + ": label column '" + k.label_column + "' missing");
        const ColumnSpec* tc = t.find_column(k.time_column);
        if (!tc || tc->kind != ColumnKind::kTimestamp)
            throw ConfigError("manifest: tasks." + k.name + ": time column '" + k.time_column +
                              "' missing or not a timestamp");
    }
}

uint64_t SchemaManifest::digest() const { return fnv1a64(to_json().dump()); }

}  // namespace kspace
