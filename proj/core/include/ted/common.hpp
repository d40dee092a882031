#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ted {

/// Base class for all errors raised by the harness.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

/// A template was asked to substitute a placeholder it does not contain.
class TemplateError : public Error {
 public:
  using Error::Error;
};

class JudgeError : public Error {
 public:
  using Error::Error;
};

class DiagnoseError : public Error {
 public:
  using Error::Error;
};

/// 64-bit FNV-1a digest rendered as 16 hex chars. Stable across platforms.
std::string fnv1a_hex(std::string_view data);

std::uint64_t fnv1a(std::string_view data);

/// Shortest round-trippable decimal rendering of a double.
std::string format_full(double value);

/// Fixed two-decimal rendering, used in human-facing tables.
std::string format_two(double value);

}  // namespace ted
