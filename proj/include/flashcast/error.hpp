#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace flashcast {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or size mismatch. axis() names the offending axis ("channels", "height", ...).
class DimensionError : public Error {
public:
    DimensionError(std::string axis, const std::string& what)
        : Error("dimension error [" + axis + "]: " + what), axis_(std::move(axis)) {}

    const std::string& axis() const noexcept { return axis_; }

private:
    std::string axis_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error("data error: " + what) {}
};

// Malformed container file. offset() is the byte position where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error("format error at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& what) : Error("training error: " + what) {}
};

// Diagnostic failures. kind() is one of "undefined_correlation", "length", "coverage",
// "empty_region", "split", "alignment", "count".
class EvaluationError : public Error {
public:
    EvaluationError(std::string kind, const std::string& what)
        : Error("evaluation error [" + kind + "]: " + what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class GradCheckError : public Error {
public:
    explicit GradCheckError(const std::string& what) : Error("gradient check: " + what) {}
};

}  // namespace flashcast
