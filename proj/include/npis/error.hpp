#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace npis {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// All sample weights are zero, so no density can be normalized.
class DegenerateWeights : public Error {
 public:
  DegenerateWeights() : Error("degenerate weights") {}
};

class InvalidSample : public Error {
 public:
  explicit InvalidSample(const std::string& what) : Error("invalid sample: " + what) {}
};

/// A conditional density was requested at a prefix of zero marginal density.
class OutsideSupport : public Error {
 public:
  OutsideSupport() : Error("conditioning outside support") {}
};

class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& what) : Error("contract violation: " + what) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : Error("parse error at line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
              what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// The pilot stage produced no positive weight (it never hit the support of the
/// optimal proposal).
class EmptyPilot : public Error {
 public:
  EmptyPilot() : Error("empty pilot: no pilot sample has positive weight; increase M or widen q0") {}
};

class DegenerateSpread : public Error {
 public:
  DegenerateSpread() : Error("degenerate spread: weighted sample variance is zero") {}
};

class NoRareEventHits : public Error {
 public:
  NoRareEventHits() : Error("no rare-event hits in pilot; increase M or strengthen trial tilt") {}
};

}  // namespace npis
