#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace preadapt {

/// Dimension or precondition violated by the caller.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Riccati/Lyapunov solver could not produce a valid solution.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A state or derivative left the finite/bounded region during integration.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double t, std::ptrdiff_t component)
      : std::runtime_error(what), t_(t), component_(component) {}

  double time() const noexcept { return t_; }
  std::ptrdiff_t component() const noexcept { return component_; }

 private:
  double t_;
  std::ptrdiff_t component_;
};

/// Invalid run configuration or scenario file. `key` names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(key) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class LearnerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace preadapt
