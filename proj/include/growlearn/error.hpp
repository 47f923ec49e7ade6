// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace growlearn {

/// Base class for every error raised by the library. The CLI maps the
/// subclasses onto exit codes, so pick the most specific one.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class InputError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class ConsistencyError : public Error { using Error::Error; };
class StructuralError : public Error { using Error::Error; };
class StrategyError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

} // namespace growlearn
