#include "flatlab/csv.hpp"

#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "flatlab/error.hpp"

namespace flatlab {

std::string format_real(double v) { return fmt::format("{:.17g}", v); }

CsvWriter::CsvWriter(std::ostream& out, std::vector<std::string> columns) : out_(out), columns_(std::move(columns)) {
    std::string joined;
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        if (i) joined += ',';
        joined += columns_[i];
    }
    out_ << "#schema: " << joined << '\n' << joined << '\n';
}

void CsvWriter::write_fields(const std::vector<std::string>& fields) {
    if (fields.size() != columns_.size()) {
        throw Error(fmt::format("CsvWriter: {} fields for {} columns", fields.size(), columns_.size()));
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out_ << ',';
        out_ << fields[i];
    }
    out_ << '\n';
}

std::size_t CsvTable::column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == name) return i;
    }
    throw Error(fmt::format("csv: no column '{}'", name));
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

CsvTable read_csv(std::istream& in) {
    CsvTable table;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        if (!have_header) {
            table.columns = split(line);
            have_header = true;
        } else {
            table.rows.push_back(split(line));
        }
    }
    if (!have_header) {
        throw Error("csv: missing header row");
    }
    return table;
}

}  // namespace flatlab
