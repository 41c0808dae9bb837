#pragma once

#include <stdexcept>
#include <string>

namespace swapdiff {

// Error taxonomy shared by every module. All of these derive from
// std::runtime_error so callers can catch broadly or per category.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes do not compose (matmul inner dims, mismatched elementwise
// operands, control residual at the wrong resolution, ...).
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// A configuration value is out of its documented range.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// A call violated an operation precondition (empty batch, non-scalar loss,
// mask value outside [0,1], ...).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Division by a vanishing schedule quantity (alpha_bar == 0).
struct SingularityError : Error {
    explicit SingularityError(const std::string& msg) : Error(msg) {}
};

// Optimization diverged (non-finite loss), reported with the step index.
struct TrainingError : Error {
    explicit TrainingError(const std::string& msg) : Error(msg) {}
};

// Guidance produced a non-finite gradient at some sampler step.
struct GuidanceError : Error {
    explicit GuidanceError(const std::string& msg) : Error(msg) {}
};

}  // namespace swapdiff
