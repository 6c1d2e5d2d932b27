#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ecg2cxr/common.hpp"

namespace ecg2cxr {

// Delimited text with a required header row. Fields containing the delimiter,
// quotes or newlines are quoted with '"' and embedded quotes doubled.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    }

    std::size_t require_column(std::string_view name) const {
        auto c = column(name);
        if (!c) throw DataError("required column \"" + std::string(name) + "\" not found in header");
        return *c;
    }
};

namespace detail {

inline std::vector<std::string> parse_csv_line(std::string_view line, char delim) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == delim) {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline bool needs_quoting(std::string_view field, char delim) {
    for (char c : field)
        if (c == delim || c == '"' || c == '\n') return true;
    return false;
}

}  // namespace detail

inline CsvTable read_csv(const std::filesystem::path& path, char delim = ',') {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path.string());
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty file (no header row): " + path.string());
    table.header = detail::parse_csv_line(line, delim);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        table.rows.push_back(detail::parse_csv_line(line, delim));
    }
    return table;
}

inline void write_csv_field(std::ostream& out, std::string_view field, char delim) {
    if (detail::needs_quoting(field, delim)) {
        out << '"';
        for (char c : field) {
            if (c == '"') out << '"';
            out << c;
        }
        out << '"';
    } else {
        out << field;
    }
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& row, char delim = ',') {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out << delim;
        write_csv_field(out, row[i], delim);
    }
    out << '\n';
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows, char delim = ',') {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path.string());
    write_csv_row(out, header, delim);
    for (const auto& row : rows) write_csv_row(out, row, delim);
}

}  // namespace ecg2cxr
