#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tracetwin {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for malformed text input; carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& reason)
        : Error("line " + std::to_string(line) + ": " + reason), line_(line), reason_(reason) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::size_t line_;
    std::string reason_;
};

namespace text {

std::string_view trim(std::string_view s);

/// Splits one delimited line. Double-quoted fields may contain the delimiter.
std::vector<std::string> split_fields(std::string_view line, char delimiter);

/// Whitespace tokenizer.
std::vector<std::string> split_ws(std::string_view line);

std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

/// Integral values print without a decimal point, others with exactly
/// `decimals` digits after rounding.
std::string format_decimal(double v, int decimals);

/// Fixed notation, trailing zeros (and a dangling point) removed.
std::string format_trimmed(double v, int max_decimals);

std::string to_lower(std::string_view s);

/// Normalizes a column header: lowercase, bracketed units removed,
/// runs of spaces/dashes folded into a single underscore.
std::string normalize_header(std::string_view s);

}  // namespace text

/// Tabular view of a delimited file with an optional header row.
/// Lines starting with '#' and blank lines are skipped.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;

    /// Index of a column by normalized header name.
    std::optional<std::size_t> column(std::string_view name) const;
};

Table read_table(std::string_view content, char delimiter, bool has_header);
Table read_table_file(const std::string& path, char delimiter, bool has_header);
std::string read_file(const std::string& path);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

}  // namespace tracetwin
