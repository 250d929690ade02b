#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fbs_audit/errors.hpp"

namespace fbs {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

namespace detail {

// One delimited line into fields. Double quotes wrap fields; "" inside a
// quoted field is a literal quote. Trailing \r is stripped by the caller.
inline std::vector<std::string> split_csv_line(const std::string& line, char delim, long row) {
    std::vector<std::string> fields;
    std::string cur;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == delim) {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (in_quotes) throw CsvError("unterminated quoted field", row);
    fields.push_back(cur);
    return fields;
}

} // namespace detail

// Semicolon-delimited CSV with a header row. UTF-8 content passes through
// untouched; CRLF line endings are tolerated.
inline CsvTable read_csv(const std::filesystem::path& path, char delim = ';') {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CsvError("cannot open file: " + path.string());
    CsvTable table;
    std::string line;
    long row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (row == 0 && line.empty()) throw CsvError("empty header row");
        if (line.empty()) {  // skip trailing blank lines only
            continue;
        }
        auto fields = detail::split_csv_line(line, delim, row);
        if (row == 0) {
            table.header = std::move(fields);
        } else {
            table.rows.push_back(std::move(fields));
        }
        ++row;
    }
    if (row == 0) throw CsvError("empty file: " + path.string());
    return table;
}

} // namespace fbs
