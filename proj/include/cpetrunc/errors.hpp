#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cpetrunc {

/// Coarse error category, used by the CLI to pick an exit code and prefix.
enum class ErrorCategory { invalid_argument, numeric, sampler, data, io };

inline const char* category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::invalid_argument: return "invalid_argument";
        case ErrorCategory::numeric: return "numeric";
        case ErrorCategory::sampler: return "sampler";
        case ErrorCategory::data: return "data";
        case ErrorCategory::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what)
        : Error(ErrorCategory::invalid_argument, what) {}
};

class NotPositiveDefinite : public Error {
public:
    explicit NotPositiveDefinite(const std::string& what)
        : Error(ErrorCategory::numeric, what) {}
};

class RankDeficient : public Error {
public:
    explicit RankDeficient(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

/// The truncation set {CPE < kappa} could not be entered from the prior.
class InitializationExhausted : public Error {
public:
    InitializationExhausted(const std::string& what, std::size_t attempts)
        : Error(ErrorCategory::sampler, what), attempts_(attempts) {}

    std::size_t attempts() const noexcept { return attempts_; }

private:
    std::size_t attempts_;
};

class MissingColumn : public Error {
public:
    explicit MissingColumn(const std::string& column)
        : Error(ErrorCategory::data, "missing column '" + column + "'"), column_(column) {}

    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t row, const std::string& column, const std::string& detail)
        : Error(ErrorCategory::data, "row " + std::to_string(row) + ", column '" + column +
                                         "': " + detail),
          row_(row), column_(column) {}

    std::size_t row() const noexcept { return row_; }
    const std::string& column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

class EmptyFile : public Error {
public:
    explicit EmptyFile(const std::string& path) : Error(ErrorCategory::data, "empty file: " + path) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

}  // namespace cpetrunc
