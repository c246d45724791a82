#pragma once

#include <stdexcept>
#include <string>

namespace plora {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class RankError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration. `key()` names the offending setting when known.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg, std::string key = {})
        : Error(key.empty() ? msg : key + ": " + msg), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

class PartitionError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class ComparisonError : public Error {
public:
    using Error::Error;
};

}  // namespace plora
