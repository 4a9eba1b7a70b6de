#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kflock {

/// Input rejected by a precondition check (bad parameter, non-finite data).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Scenario configuration violates the schema or a parameter constraint.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A proven bound (support radius, field bound, density bound) was observed broken.
class InvariantViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Agent integration produced a non-finite state.
class IntegrationBlowup : public std::runtime_error {
 public:
  IntegrationBlowup(std::size_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A velocity field returned a non-finite value at a particle position.
class PropagationError : public std::runtime_error {
 public:
  PropagationError(std::size_t particle, const std::string& what)
      : std::runtime_error(what), particle_(particle) {}
  std::size_t particle() const noexcept { return particle_; }

 private:
  std::size_t particle_;
};

/// Grid too coarse for the requested step (characteristic foot left the safety box).
class ResolutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kflock
