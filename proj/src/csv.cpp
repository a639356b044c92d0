#include "kspace/csv.hpp"

#include <fstream>
#include <sstream>

#include "kspace/error.hpp"

namespace kspace {

int64_t CsvTable::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int64_t>(i);
    return -1;
}

CsvTable parse_csv(const std::string& text, const std::string& origin) {
    CsvTable out;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool row_started = false;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
    };
    auto end_record = [&] {
        end_field();
        if (out.header.empty()) {
            out.header = std::move(record);
        } else {
            if (record.size() != out.header.size())
                throw IoError(origin + ": row " + std::to_string(out.rows.size() + 1) + " has " +
                              std::to_string(record.size()) + " fields, expected " +
                              std::to_string(out.header.size()));
            out.rows.push_back(std::move(record));
        }
        record.clear();
        row_started = false;
    };

    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                in_quotes = true;
                row_started = true;
                break;
            case ',':
                end_field();
                row_started = true;
                break;
            case '\r':
                break;
            case '\n':
                if (row_started || !field.empty() || !record.empty()) end_record();
                break;
            default:
                field.push_back(c);
                row_started = true;
        }
    }
    if (in_quotes) throw IoError(origin + ": unterminated quoted field");
    if (row_started || !field.empty() || !record.empty()) end_record();
    if (out.header.empty()) throw IoError(origin + ": empty file");
    return out;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("csv: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_csv(ss.str(), path);
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("csv: cannot open for write " + path);
    auto write_row = [&](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) f << ',';
            f << csv_escape(row[i]);
        }
        f << '\n';
    };
    write_row(table.header);
    for (const auto& r : table.rows) write_row(r);
    if (!f) throw IoError("csv: write failed " + path);
}

}  // namespace kspace
