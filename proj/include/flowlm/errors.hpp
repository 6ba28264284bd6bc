// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace flowlm {

// Malformed user input: bad arguments, empty corpora, out-of-range times.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Noise-schedule violations (non-monotone gamma, vanishing volatility).
class ScheduleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inversion of F with sigma below the floor.
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// NaN/Inf during training or sampling.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedPolicy : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace flowlm
