#pragma once

#include <stdexcept>
#include <string>

namespace lexsum {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// bad option value, malformed config file, unknown key
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// malformed input data: bad JSONL line, duplicate id, missing field
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// shape mismatch in linear algebra or adapter wiring
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// document-level processing failure inside a batch run
class PipelineError : public Error {
public:
    explicit PipelineError(const std::string& msg) : Error(msg) {}
};

// could not reach the remote service at all
class TransportError : public Error {
public:
    explicit TransportError(const std::string& msg) : Error(msg) {}
};

// service answered but the reply was unusable
class BackendError : public Error {
public:
    explicit BackendError(const std::string& msg) : Error(msg) {}
};

// produced summary exceeds the hard output cap
class OverLengthError : public Error {
public:
    explicit OverLengthError(const std::string& msg) : Error(msg) {}
};

}  // namespace lexsum
