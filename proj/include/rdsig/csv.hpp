#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace rdsig::csv {

// Minimal RFC 4180 reader: comma separated, double-quoted fields with ""
// escapes, quoted fields may span lines. CRLF and LF both accepted.
class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    // Next record, or nullopt at end of input. Blank lines are skipped.
    std::optional<std::vector<std::string>> next();

    // 1-based line number on which the last returned record started.
    std::size_t line() const { return record_line_; }

private:
    std::istream& in_;
    std::size_t line_ = 0;
    std::size_t record_line_ = 0;
};

std::string escape(const std::string& field);
std::string join(const std::vector<std::string>& fields);

// Shortest representation that round-trips to the same double (at most 17
// significant digits). NaN and infinities are written as empty fields by
// callers that need that; this writes "nan"/"inf"/"-inf".
std::string format_double(double v);

// Empty string for non-finite values, format_double otherwise.
std::string format_finite(double v);

}  // namespace rdsig::csv
