#ifndef OTSHAPE_ERRORS_HPP_
#define OTSHAPE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace otshape {

// Bad flag/option values (nonpositive gamma, alpha outside (0,1), ...).
class ParameterError : public std::invalid_argument {
 public:
  explicit ParameterError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed user data (CSV rows, duplicate mesh points, dimension mismatch).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure with advice on how to recover.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace otshape

#endif  // OTSHAPE_ERRORS_HPP_
