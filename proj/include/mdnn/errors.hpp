#pragma once

#include <stdexcept>
#include <string>

namespace mdnn {

/// Invalid configuration. `field()` names the offending setting when known.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg, std::string field = {})
        : std::runtime_error(field.empty() ? msg : field + ": " + msg), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A value outside the mathematical domain of an operation (e.g. dz <= 0).
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data outside its admissible range (e.g. pixel > 1).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file content; carries the row or byte offset where parsing failed.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, long long location)
        : std::runtime_error(msg), location_(location) {}

    long long location() const noexcept { return location_; }

private:
    long long location_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API misuse, such as running a backward pass without forward caches.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace mdnn
