#pragma once

#include <stdexcept>
#include <string>

namespace hfn {

// Error taxonomy; the CLI maps these to distinct exit codes
// (config=2, data format=3, numeric=4, io=5, everything else=1).

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PartitionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/precondition violations on tensor operations.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// API misuse: caller broke an operation contract (wrong tile count,
// non-scalar loss, mismatched payload lengths, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Value outside the mathematical domain (label out of range, zero vector
// where a direction is required, empty evaluation set).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

}  // namespace hfn
