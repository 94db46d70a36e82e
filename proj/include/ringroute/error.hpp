#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ringroute {

// Raised for parameter values outside an operation's domain.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when an internal consistency check fails. Seeing one of these
// means the library is wrong, not the caller.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// The exact engine refused to enumerate more states than allowed.
class StateCapExceeded : public std::runtime_error {
 public:
  StateCapExceeded(std::size_t states, std::size_t cap, std::size_t max_bits)
      : std::runtime_error("state cap exceeded: " + std::to_string(states) +
                           " states (cap " + std::to_string(cap) +
                           "), largest coefficient " + std::to_string(max_bits) + " bits"),
        states_(states),
        cap_(cap),
        max_bits_(max_bits) {}

  std::size_t states() const noexcept { return states_; }
  std::size_t cap() const noexcept { return cap_; }
  std::size_t max_coefficient_bits() const noexcept { return max_bits_; }

 private:
  std::size_t states_;
  std::size_t cap_;
  std::size_t max_bits_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw DomainError(message);
}

inline void ensure(bool condition, const std::string& message) {
  if (!condition) throw InvariantError(message);
}

}  // namespace ringroute
