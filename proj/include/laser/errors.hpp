#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace laser {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// A transform returned a value whose shape differs from the site's native value.
class InjectionShapeError : public ShapeError {
public:
    InjectionShapeError(std::string site, const std::string& what)
        : ShapeError("injection at site " + site + ": " + what), site_(std::move(site)) {}
    const std::string& site() const { return site_; }

private:
    std::string site_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Agent output that stayed malformed after every retry. Keeps the last raw response.
class PlanningError : public Error {
public:
    PlanningError(const std::string& what, std::string raw_output)
        : Error(what), raw_output_(std::move(raw_output)) {}
    const std::string& raw_output() const { return raw_output_; }

private:
    std::string raw_output_;
};

class LoadError : public Error {
public:
    LoadError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

}  // namespace laser
