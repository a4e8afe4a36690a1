#pragma once

#include <stdexcept>
#include <string>

namespace mmalign {

// Base of every error the library raises. The category decides the CLI exit
// code (2 usage/config, 3 data, 4 numerical).
class Error : public std::runtime_error {
 public:
  enum class Category { kUsage, kData, kNumerical };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(Category::kUsage, "dimension error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(Category::kUsage, "configuration error: " + what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(Category::kData, "data error: " + what) {}
};

class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : Error(Category::kData,
              "schema error at line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class LabelError : public Error {
 public:
  explicit LabelError(const std::string& what)
      : Error(Category::kData, "label error: " + what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(Category::kNumerical, "numerical error: " + what) {}
};

// Sinkhorn kernel underflow: a whole band row or column of exp(-M/mu) is 0.
class ConditioningError : public Error {
 public:
  explicit ConditioningError(const std::string& what)
      : Error(Category::kNumerical,
              "conditioning error: " + what +
                  " (increase mu or enable the log-domain retry)") {}
};

class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& what)
      : Error(Category::kNumerical, "degenerate input: " + what) {}
};

}  // namespace mmalign
