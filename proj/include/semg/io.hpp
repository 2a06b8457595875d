#pragma once

// Plain-text artifacts: PGM P2 images, map matrices and metric tables as CSV.
// Number formatting goes through std::to_chars, so output never depends on
// the process locale.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "semg/error.hpp"
#include "semg/files.hpp"
#include "semg/rf_env.hpp"
#include "semg/uav_mission.hpp"

namespace semg {

/// Fixed notation with `decimals` digits after the point.
inline std::string format_fixed(double v, int decimals = 6) {
    if (!std::isfinite(v)) throw NumericError("format: non-finite value");
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, decimals);
    if (ec != std::errc()) throw NumericError("format: value too wide");
    std::string s(buf, ptr);
    if (s.starts_with('-') && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);  // no "-0.000000"
    return s;
}

/// Grey level for a dB value: round-half-up of 255 (v - lo) / (hi - lo), clamped to [0, 255].
inline int pgm_level(double db, double lo_db, double hi_db) {
    const double q = 255.0 * (std::clamp(db, lo_db, hi_db) - lo_db) / (hi_db - lo_db);
    return std::clamp(static_cast<int>(std::floor(q + 0.5)), 0, 255);
}

inline std::string format_pgm(const GridMap& map, double lo_db, double hi_db) {
    require(lo_db < hi_db, "pgm: clamp requires lo < hi");
    require(map.width > 0 && map.height > 0 && map.size() == static_cast<std::size_t>(map.width) * map.height,
            "pgm: invalid map");
    std::string out = "P2\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            if (x) out += ' ';
            out += std::to_string(pgm_level(map.at(x, y), lo_db, hi_db));
        }
        out += '\n';
    }
    return out;
}

inline void export_pgm(const SnrMap& map, const EnvConfig& env, const std::filesystem::path& path) {
    write_text_file(path.string(), format_pgm(map, env.snr_lo_db, env.snr_hi_db));
}

/// Map as a height x width matrix of dB values, one grid row per line.
inline std::string format_map_csv(const GridMap& map) {
    std::string out;
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            if (x) out += ',';
            out += format_fixed(map.at(x, y));
        }
        out += '\n';
    }
    return out;
}

/// One row per measurement in visit order: cell_x, cell_y, order_index, value_db.
inline std::string format_measurements_csv(const MeasurementSet& m) {
    std::string out = "cell_x,cell_y,order_index,value_db\n";
    for (std::size_t i = 0; i < m.order.size(); ++i) {
        const int c = m.order[i];
        out += std::to_string(c % m.width) + ',' + std::to_string(c / m.width) + ',' + std::to_string(i) + ',' +
               format_fixed(m.cell_values_db[static_cast<std::size_t>(c)]) + '\n';
    }
    return out;
}

using CsvValue = std::variant<std::string, double, std::int64_t>;

inline std::string csv_field(const CsvValue& v) {
    if (const auto* d = std::get_if<double>(&v)) return format_fixed(*d);
    if (const auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
    const auto& s = std::get<std::string>(v);
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

inline std::string csv_line(const std::vector<CsvValue>& row) {
    std::string out;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += csv_field(row[i]);
    }
    return out + '\n';
}

inline std::string csv_header_line(const std::vector<std::string>& header) {
    std::vector<CsvValue> row(header.begin(), header.end());
    return csv_line(row);
}

/// Appends one row; the header is written when the file is new or empty and
/// must match the existing first line otherwise.
inline void append_metrics(const std::filesystem::path& path, const std::vector<std::string>& header,
                           const std::vector<CsvValue>& row) {
    require(!header.empty(), "append_metrics: empty header");
    require(header.size() == row.size(), "append_metrics: header has " + std::to_string(header.size()) +
                                             " columns, row has " + std::to_string(row.size()));
    const std::string head = csv_header_line(header);
    bool fresh = true;
    {
        std::ifstream in(path, std::ios::binary);
        std::string first;
        if (in && std::getline(in, first)) {
            fresh = false;
            require(first + '\n' == head, "append_metrics: header differs from existing file");
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to '" + path.string() + "'");
    if (fresh) out << head;
    out << csv_line(row);
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// In-memory table written in one go; used for files that are produced whole.
class CsvTable {
  public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
        require(!header_.empty(), "csv: empty header");
    }
    void add(std::vector<CsvValue> row) {
        require(row.size() == header_.size(), "csv: row arity does not match header");
        rows_.push_back(std::move(row));
    }
    std::size_t rows() const { return rows_.size(); }
    std::string str() const {
        std::string out = csv_header_line(header_);
        for (const auto& r : rows_) out += csv_line(r);
        return out;
    }
    void write(const std::filesystem::path& path) const { write_text_file(path.string(), str()); }

  private:
    std::vector<std::string> header_;
    std::vector<std::vector<CsvValue>> rows_;
};

}  // namespace semg
