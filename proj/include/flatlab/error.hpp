#pragma once

#include <stdexcept>
#include <string>

namespace flatlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when an optimizer iterate leaves the finite/bounded region.
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t outer_step, std::size_t inner_step, const std::string& what)
        : Error(what), outer_step_(outer_step), inner_step_(inner_step) {}

    [[nodiscard]] std::size_t outer_step() const noexcept { return outer_step_; }
    [[nodiscard]] std::size_t inner_step() const noexcept { return inner_step_; }

private:
    std::size_t outer_step_;
    std::size_t inner_step_;
};

}  // namespace flatlab
