#include "kspace/bundle.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <set>
#include <unordered_map>

#include "kspace/csv.hpp"
#include "kspace/error.hpp"

namespace kspace {

namespace {

// Howard Hinnant's days-from-civil; avoids timezone-dependent mktime.
int64_t days_from_civil(int64_t y, int64_t m, int64_t d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const int64_t yoe = y - era * 400;
    const int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

bool all_digits(const std::string& s, size_t from, size_t to) {
    if (from >= to || to > s.size()) return false;
    for (size_t i = from; i < to; ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

}  // namespace

int64_t parse_timestamp(const std::string& s) {
    // plain integer: epoch seconds
    {
        int64_t v = 0;
        const char* begin = s.data();
        const char* end = s.data() + s.size();
        if (begin != end && (*begin == '-' || *begin == '+')) ++begin;
        auto [p, ec] = std::from_chars(begin, end, v);
        if (ec == std::errc() && p == end && begin != end) {
            int64_t full = 0;
            auto [p2, ec2] = std::from_chars(s.data(), end, full);
            (void)p2;
            if (ec2 == std::errc()) return full;
        }
    }
    // YYYY-MM-DD[ T]HH:MM:SS
    if (s.size() >= 10 && s[4] == '-' && s[7] == '-' && all_digits(s, 0, 4) && all_digits(s, 5, 7) &&
        all_digits(s, 8, 10)) {
        const int64_t y = std::stoll(s.substr(0, 4));
        const int64_t mo = std::stoll(s.substr(5, 2));
        const int64_t d = std::stoll(s.substr(8, 2));
        if (mo < 1 || mo > 12 || d < 1 || d > 31) throw IoError("timestamp out of range: '" + s + "'");
        int64_t secs = days_from_civil(y, mo, d) * 86400;
        if (s.size() == 10) return secs;
        if (s.size() == 19 && (s[10] == ' ' || s[10] == 'T') && s[13] == ':' && s[16] == ':' &&
            all_digits(s, 11, 13) && all_digits(s, 14, 16) && all_digits(s, 17, 19)) {
            const int64_t hh = std::stoll(s.substr(11, 2));
            const int64_t mi = std::stoll(s.substr(14, 2));
            const int64_t ss = std::stoll(s.substr(17, 2));
            if (hh > 23 || mi > 59 || ss > 60) throw IoError("timestamp out of range: '" + s + "'");
            return secs + hh * 3600 + mi * 60 + ss;
        }
    }
    throw IoError("unparsable timestamp: '" + s + "'");
}

const ColumnData& TableData::column(const TableSpec& spec, const std::string& name) const {
    for (size_t i = 0; i < spec.columns.size(); ++i)
        if (spec.columns[i].name == name) return cols[i];
    throw ContractError("table '" + spec.name + "': no column '" + name + "'");
}

const TableData& RelationalBundle::table(const std::string& name) const {
    const int64_t i = manifest.table_index(name);
    if (i < 0) throw ContractError("bundle: unknown table '" + name + "'");
    return tables[static_cast<size_t>(i)];
}

std::vector<int> RelationalBundle::task_labels(const std::string& task) const {
    const TaskSpec* t = manifest.find_task(task);
    if (!t) throw ContractError("bundle: unknown task '" + task + "'");
    const int64_t ti = manifest.table_index(t->table);
    const TableSpec& spec = manifest.tables[static_cast<size_t>(ti)];
    const ColumnData& col = tables[static_cast<size_t>(ti)].column(spec, t->label_column);
    std::vector<int> out(col.nums.size());
    for (size_t i = 0; i < col.nums.size(); ++i) out[i] = static_cast<int>(col.nums[i]);
    return out;
}

std::vector<int64_t> RelationalBundle::task_times(const std::string& task) const {
    const TaskSpec* t = manifest.find_task(task);
    if (!t) throw ContractError("bundle: unknown task '" + task + "'");
    const int64_t ti = manifest.table_index(t->table);
    const TableSpec& spec = manifest.tables[static_cast<size_t>(ti)];
    return tables[static_cast<size_t>(ti)].column(spec, t->time_column).times;
}

RelationalBundle ingest(const SchemaManifest& manifest, const std::string& base_dir) {
    manifest.validate();
    RelationalBundle bundle;
    bundle.manifest = manifest;
    bundle.tables.resize(manifest.tables.size());

    std::vector<CsvTable> raw(manifest.tables.size());
    std::vector<std::unordered_map<std::string, int64_t>> pk_maps(manifest.tables.size());

    // pass 1: load CSVs, type the columns, index primary keys
    for (size_t ti = 0; ti < manifest.tables.size(); ++ti) {
        const TableSpec& spec = manifest.tables[ti];
        const auto path = std::filesystem::path(base_dir) / spec.file;
        raw[ti] = read_csv(path.string());
        const CsvTable& csv = raw[ti];

        TableData& table = bundle.tables[ti];
        table.name = spec.name;
        table.n_rows = static_cast<int64_t>(csv.rows.size());
        table.cols.resize(spec.columns.size());

        for (size_t ci = 0; ci < spec.columns.size(); ++ci) {
            const ColumnSpec& cspec = spec.columns[ci];
            const int64_t at = csv.column(cspec.name);
            if (at < 0)
                throw IoError(spec.file + ": missing column '" + cspec.name + "'");
            ColumnData& col = table.cols[ci];
            col.kind = cspec.kind;
            switch (cspec.kind) {
                case ColumnKind::kNumeric: {
                    col.nums.resize(csv.rows.size());
                    for (size_t r = 0; r < csv.rows.size(); ++r) {
                        const std::string& cell = csv.rows[r][static_cast<size_t>(at)];
                        if (cell.empty()) {
                            col.nums[r] = std::nan("");
                        } else {
                            try {
                                size_t pos = 0;
                                col.nums[r] = std::stod(cell, &pos);
                                if (pos != cell.size()) throw std::invalid_argument(cell);
                            } catch (const std::exception&) {
                                throw IoError(spec.file + ": row " + std::to_string(r + 1) +
                                              ": bad numeric value '" + cell + "' in column '" + cspec.name + "'");
                            }
                        }
                    }
                    break;
                }
                case ColumnKind::kCategorical: {
                    col.strs.resize(csv.rows.size());
                    std::set<std::string> vocab;
                    for (size_t r = 0; r < csv.rows.size(); ++r) {
                        col.strs[r] = csv.rows[r][static_cast<size_t>(at)];
                        if (!col.strs[r].empty()) vocab.insert(col.strs[r]);
                    }
                    col.vocab.assign(vocab.begin(), vocab.end());
                    break;
                }
                case ColumnKind::kTimestamp: {
                    col.times.resize(csv.rows.size());
                    for (size_t r = 0; r < csv.rows.size(); ++r) {
                        const std::string& cell = csv.rows[r][static_cast<size_t>(at)];
                        if (cell.empty()) {
                            col.times[r] = kStaticTime;
                        } else {
                            try {
                                col.times[r] = parse_timestamp(cell);
                            } catch (const IoError& e) {
                                throw IoError(spec.file + ": row " + std::to_string(r + 1) + ": " + e.what());
                            }
                        }
                    }
                    break;
                }
                case ColumnKind::kPrimaryKey: {
                    col.strs.resize(csv.rows.size());
                    for (size_t r = 0; r < csv.rows.size(); ++r) {
                        col.strs[r] = csv.rows[r][static_cast<size_t>(at)];
                        if (col.strs[r].empty())
                            throw IoError(spec.file + ": row " + std::to_string(r + 1) + ": empty primary key");
                        auto [it, fresh] = pk_maps[ti].emplace(col.strs[r], static_cast<int64_t>(r));
                        (void)it;
                        if (!fresh)
                            throw IoError(spec.file + ": row " + std::to_string(r + 1) + ": duplicate primary key '" +
                                          col.strs[r] + "'");
                    }
                    break;
                }
                case ColumnKind::kForeignKey: {
                    col.strs.resize(csv.rows.size());
                    for (size_t r = 0; r < csv.rows.size(); ++r) col.strs[r] = csv.rows[r][static_cast<size_t>(at)];
                    break;
                }
            }
        }
    }

    // pass 2: resolve foreign keys now that every pk map exists
    for (size_t ti = 0; ti < manifest.tables.size(); ++ti) {
        const TableSpec& spec = manifest.tables[ti];
        for (size_t ci = 0; ci < spec.columns.size(); ++ci) {
            const ColumnSpec& cspec = spec.columns[ci];
            if (cspec.kind != ColumnKind::kForeignKey) continue;
            ColumnData& col = bundle.tables[ti].cols[ci];
            const size_t target = static_cast<size_t>(manifest.table_index(cspec.target_table));
            col.refs.resize(col.strs.size(), -1);
            for (size_t r = 0; r < col.strs.size(); ++r) {
                if (col.strs[r].empty()) continue;  // null: no edge
                auto it = pk_maps[target].find(col.strs[r]);
                if (it == pk_maps[target].end()) {
                    bundle.warnings.push_back(spec.file + ": row " + std::to_string(r + 1) + ": dangling foreign key '" +
                                              col.strs[r] + "' in column '" + cspec.name + "' (edge dropped)");
                } else {
                    col.refs[r] = it->second;
                }
            }
        }
    }

    // task label columns must be binary
    for (const auto& task : manifest.tasks) {
        const size_t ti = static_cast<size_t>(manifest.table_index(task.table));
        const ColumnData& col = bundle.tables[ti].column(manifest.tables[ti], task.label_column);
        if (col.kind != ColumnKind::kNumeric)
            throw ConfigError("task '" + task.name + "': label column must be numeric 0/1");
        for (size_t r = 0; r < col.nums.size(); ++r) {
            const double v = col.nums[r];
            if (!(v == 0.0 || v == 1.0))
                throw IoError(manifest.tables[ti].file + ": row " + std::to_string(r + 1) +
                              ": label '" + task.label_column + "' must be 0 or 1");
        }
    }

    for (const auto& w : bundle.warnings) std::cerr << "warning: " << w << '\n';
    return bundle;
}

}  // namespace kspace
