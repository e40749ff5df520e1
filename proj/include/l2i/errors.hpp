#pragma once

#include <stdexcept>
#include <string>

namespace l2i {

/// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the domain of a function (log of a non-positive value, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Normalising a vector whose norm is at or below the degeneracy threshold.
struct DegenerateVectorError : std::domain_error {
    using std::domain_error::domain_error;
};

/// A NaN or Inf appeared in values, gradients or losses.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Caller broke an API precondition (non-scalar loss, second backward, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// A batch or loss input violates the per-class target sampling contract.
struct SamplerContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid or unsatisfiable configuration value.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Metric is not defined for the given input (e.g. AUROC with one class).
struct UndefinedMetricError : std::domain_error {
    using std::domain_error::domain_error;
};

}  // namespace l2i
