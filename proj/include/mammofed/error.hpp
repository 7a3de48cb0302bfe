#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mammofed {

/// Root of every exception thrown by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed text (wire JSON, DSL, XML). `offset` is a 0-based byte position.
class ParseError : public Error {
public:
    ParseError(std::size_t offset, const std::string& what)
        : Error("parse error at offset " + std::to_string(offset) + ": " + what), offset_(offset) {}

    [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// A structurally valid query that violates the query model (bad path, bad literal, depth).
class QueryError : public Error {
public:
    using Error::Error;
};

class TranslationError : public Error {
public:
    explicit TranslationError(std::string term)
        : Error("unknown term \"" + term + "\""), term_(std::move(term)) {}

    [[nodiscard]] const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

class CriteriaError : public Error {
public:
    using Error::Error;
};

class CompileError : public Error {
public:
    using Error::Error;
};

class ExecutionError : public Error {
public:
    using Error::Error;
};

class IntegrityError : public Error {
public:
    using Error::Error;
};

class CacheError : public Error {
public:
    using Error::Error;
};

class AllocationError : public Error {
public:
    using Error::Error;
};

class CorrelationError : public Error {
public:
    using Error::Error;
};

class StartupError : public Error {
public:
    using Error::Error;
};

} // namespace mammofed
