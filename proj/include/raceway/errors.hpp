#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace raceway {

// Every failure raised by the library derives from Error so callers at the
// CLI/service boundary can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite or out-of-domain model/config parameter.
class ParameterError : public Error {
public:
    using Error::Error;
};

// Integrator step outside its admissible range.
class StepError : public Error {
public:
    using Error::Error;
};

// Malformed input file. Carries the 1-based line number when known (0 otherwise).
class IngestionError : public Error {
public:
    IngestionError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class FeatureError : public Error {
public:
    using Error::Error;
};

class PredictionError : public Error {
public:
    using Error::Error;
};

class AccountingError : public Error {
public:
    using Error::Error;
};

class MetricsError : public Error {
public:
    using Error::Error;
};

// Aggregates every violation found while validating a document, so the user
// sees all of them at once rather than one per attempt.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> violations)
        : Error(join(violations)), violations_(std::move(violations)) {}
    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "validation failed:";
        for (const auto& s : v) out += "\n  - " + s;
        return out;
    }
    std::vector<std::string> violations_;
};

}  // namespace raceway
