#pragma once

#include <string>
#include <vector>

namespace kspace {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int64_t column(const std::string& name) const;  // -1 if absent
};

// RFC-4180 style: quoted fields, "" escapes, embedded newlines inside quotes.
CsvTable read_csv(const std::string& path);
CsvTable parse_csv(const std::string& text, const std::string& origin = "<string>");

std::string csv_escape(const std::string& field);
void write_csv(const std::string& path, const CsvTable& table);

}  // namespace kspace
