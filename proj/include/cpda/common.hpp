#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace cpda {

// Error categories map to CLI exit codes: config -> 2, data -> 3, numerical -> 4.
// Shape/contract errors indicate caller bugs and are not expected in a correct run.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericalError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};

inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError("shape: " + msg);
}
inline void check_contract(bool ok, const std::string& msg) {
    if (!ok) throw ContractError("contract: " + msg);
}
inline void check_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
}
inline void check_data(bool ok, const std::string& msg) {
    if (!ok) throw DataError("data: " + msg);
}

// Single RNG type everywhere so seeded runs replay exactly.
using Rng = std::mt19937_64;

}  // namespace cpda
