#ifndef FEDSIM_ERRORS_HPP
#define FEDSIM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace fedsim {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ConfigError/ContractError -> 2, NumericError -> 3, IoError -> 4.

// Invalid configuration, invalid file schema, or inconsistent shapes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller violated an operation precondition.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A computation produced NaN/Inf or otherwise left the numeric domain.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem / stream failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedsim

#endif  // FEDSIM_ERRORS_HPP
