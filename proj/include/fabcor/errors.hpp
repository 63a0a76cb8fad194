// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fabcor {

// Tensor/model shape violations (mismatched channels, odd pooling extents, ...).
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Broken API preconditions (empty input lists, backward on a non-scalar, ...).
class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed byte streams. Carries the offset the parser choked on.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_ = 0;
};

// Structurally valid stream using features outside the supported subset.
class UnsupportedElementError : public ParseError {
public:
    using ParseError::ParseError;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (training loss, gradients).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace fabcor
