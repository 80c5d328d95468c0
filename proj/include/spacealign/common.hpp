#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace spacealign {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Error taxonomy. Everything derives from std::runtime_error so callers that
// only care about the message can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by the caller (shape mismatch, out-of-range value).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Text outside the closed caption grammar.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string token)
      : Error(message), token_(std::move(token)) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

// The pixel oracle could not find a shape in an image.
class UndetectedError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed artifact on disk (checkpoint, PNG, JSON-lines).
class DataError : public Error {
 public:
  using Error::Error;
};

// Training loss blew up past the divergence guard.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace spacealign
