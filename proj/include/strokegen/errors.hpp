#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace strokegen {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidStroke : public Error {
 public:
  using Error::Error;
};

class DegenerateStroke : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

class LayoutUnderflow : public LayoutError {
 public:
  using LayoutError::LayoutError;
};

/// Raised while reading a JSON-lines file; `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A record parsed but broke an invariant. `line()` is 0 when the record
/// did not come from a file.
class ValidationError : public Error {
 public:
  ValidationError(std::size_t line, std::string reason)
      : Error(line ? "line " + std::to_string(line) + ": " + reason : reason),
        line_(line),
        reason_(std::move(reason)) {}
  explicit ValidationError(std::string reason) : ValidationError(0, std::move(reason)) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::size_t line_;
  std::string reason_;
};

/// Character outside the vocabulary. `position` counts code points.
class VocabError : public Error {
 public:
  VocabError(char32_t ch, std::size_t position)
      : Error("character U+" + hex(ch) + " at position " + std::to_string(position) +
              " is not in the vocabulary"),
        ch_(ch),
        position_(position) {}
  char32_t character() const noexcept { return ch_; }
  std::size_t position() const noexcept { return position_; }

 private:
  static std::string hex(char32_t c) {
    static const char* digits = "0123456789ABCDEF";
    std::string out;
    for (int shift = 20; shift >= 0; shift -= 4) out += digits[(c >> shift) & 0xF];
    while (out.size() > 4 && out.front() == '0') out.erase(out.begin());
    return out;
  }
  char32_t ch_;
  std::size_t position_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace strokegen
