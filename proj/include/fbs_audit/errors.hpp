#pragma once

#include <stdexcept>
#include <string>

namespace fbs {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dataset ingestion failures; row is 1-based over data rows (0 = header/file level).
struct CsvError : Error {
    CsvError(const std::string& msg, long row = 0)
        : Error(row > 0 ? msg + " (row " + std::to_string(row) + ")" : msg), row(row) {}
    long row;
};

struct ConfigError : Error {
    using Error::Error;
};

// Model fitting / prediction shape problems.
struct FitError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};

// Prompt rendering and agent-response parsing.
struct RenderError : Error {
    using Error::Error;
};
struct ParseError : Error {
    ParseError(const std::string& msg, std::string raw_text)
        : Error(msg), raw(std::move(raw_text)) {}
    std::string raw;
};

// Transport / endpoint failures after retries.
struct EndpointError : Error {
    using Error::Error;
};
struct CacheError : Error {
    using Error::Error;
};

// A whole condition run is abandoned (no partial prediction sets).
struct ConditionError : Error {
    using Error::Error;
};

// Metric/stat domain violations (empty group, unpaired inputs, ...).
struct DomainError : Error {
    using Error::Error;
};
struct PairingError : Error {
    using Error::Error;
};

} // namespace fbs
