// csv.hpp - minimal CSV reading/writing for the toolkit's column formats.
//
// All files are UTF-8 with LF line endings and a mandatory header row.
// Doubles are written with %.17g so write-then-read round-trips exactly.

#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpet::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return static_cast<int>(c);
        throw std::invalid_argument("csv: missing column '" + name + "'");
    }

    bool has_column(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }

    std::vector<std::string> cells(const std::string& name) const {
        int c = column(name);
        std::vector<std::string> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r[c]);
        return out;
    }
};

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("csv: cannot open '" + path + "'");
    Table t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size())
                throw std::invalid_argument("csv: ragged row in '" + path + "'");
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw std::invalid_argument("csv: empty file '" + path + "'");
    return t;
}

inline double to_double(const std::string& cell) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(cell, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("csv: bad number '" + cell + "'");
    }
    if (pos != cell.size()) throw std::invalid_argument("csv: bad number '" + cell + "'");
    return v;
}

inline long to_long(const std::string& cell) {
    std::size_t pos = 0;
    long v;
    try {
        v = std::stol(cell, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("csv: bad integer '" + cell + "'");
    }
    if (pos != cell.size()) throw std::invalid_argument("csv: bad integer '" + cell + "'");
    return v;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("csv: cannot write '" + path + "'");
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace dpet::csv
