#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dnnc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or matrix dimensions do not compose.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Argument outside its mathematical domain (u outside (0,1), negative rate, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Margin estimation on a sample without spread.
class DegenerateMarginError : public Error {
public:
    using Error::Error;
};

/// Linear algebra failure (Cholesky, singular correlation matrix).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed input files (CSV cells, missing columns).
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid or missing configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A stochastic simulator left its admissible state space.
class SimulationDiverged : public Error {
public:
    SimulationDiverged(const std::string& what, std::vector<double> rho) : Error(what), rho_(std::move(rho)) {}
    const std::vector<double>& rho() const noexcept { return rho_; }

private:
    std::vector<double> rho_;
};

}  // namespace dnnc
