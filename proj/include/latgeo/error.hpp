#pragma once

#include <stdexcept>
#include <string>

namespace latgeo {

// Error taxonomy. The CLI maps these onto exit codes:
// input/shape/config/parse -> 1, numeric divergence -> 2, filesystem -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct DivergenceError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace latgeo
