#pragma once

#include <stdexcept>
#include <string>

namespace g2d {

// Error taxonomy. The CLI maps these onto process exit codes
// (config -> 2, pipeline -> 3, training/numerical -> 4).

// Invalid user-supplied configuration: bad hyperparameters, malformed
// specs/plans, invalid schedules.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible tensor shapes. Messages name both shapes.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// An API precondition was violated by the caller (empty batch, non-scalar
// loss, duplicate modality ids, ...).
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Bad data fed to an otherwise valid pipeline (label out of range, ...).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// A pipeline dependency is missing or inconsistent (absent teacher cache,
// stale checkpoint hash, unreadable dataset file).
class PipelineError : public std::runtime_error {
public:
    explicit PipelineError(const std::string& what) : std::runtime_error(what) {}
};

// Training diverged or produced non-finite values.
class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace g2d
