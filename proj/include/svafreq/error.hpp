#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace svafreq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed input at a known line/row (1-based).
class ParseError : public Error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// Two lexemes share a surface form.
class DuplicateFormError : public ValidationError {
public:
    explicit DuplicateFormError(const std::string& form)
        : ValidationError("form '" + form + "' is registered by more than one lexeme"), form_(form) {}

    const std::string& form() const noexcept { return form_; }

private:
    std::string form_;
};

/// count(target) and count(competing) are both zero.
class UndefinedRatioError : public Error {
public:
    using Error::Error;
};

class PoolUnderflowError : public Error {
public:
    using Error::Error;
};

class OutOfVocabularyError : public Error {
public:
    explicit OutOfVocabularyError(const std::string& token)
        : Error("candidate '" + token + "' is not in the scorer vocabulary"), token_(token) {}

    const std::string& token() const noexcept { return token_; }

private:
    std::string token_;
};

class TrainingDivergedError : public Error {
public:
    using Error::Error;
};

} // namespace svafreq
