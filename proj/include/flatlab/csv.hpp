#pragma once

#include <concepts>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace flatlab {

/// Formats a double with 17 significant digits (round-trip exact).
[[nodiscard]] std::string format_real(double v);

/// CSV writer. Every file starts with a `#schema:` comment followed by the
/// header row; floats are written with 17 significant digits.
class CsvWriter {
public:
    CsvWriter(std::ostream& out, std::vector<std::string> columns);

    template <typename... Cells>
    void row(const Cells&... cells) {
        std::vector<std::string> fields;
        fields.reserve(sizeof...(cells));
        (fields.push_back(to_field(cells)), ...);
        write_fields(fields);
    }

    void write_fields(const std::vector<std::string>& fields);

    [[nodiscard]] const std::vector<std::string>& columns() const noexcept { return columns_; }

private:
    static std::string to_field(double v) { return format_real(v); }
    static std::string to_field(float v) { return format_real(v); }
    static std::string to_field(bool v) { return v ? "1" : "0"; }
    static std::string to_field(const std::string& v) { return v; }
    static std::string to_field(std::string_view v) { return std::string(v); }
    static std::string to_field(const char* v) { return v; }
    template <std::integral T>
    static std::string to_field(T v) {
        return std::to_string(v);
    }

    std::ostream& out_;
    std::vector<std::string> columns_;
};

/// Parsed CSV table (comment lines skipped, first non-comment line is the header).
struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column_index(std::string_view name) const;
};

[[nodiscard]] CsvTable read_csv(std::istream& in);

}  // namespace flatlab
