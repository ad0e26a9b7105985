#pragma once

#include <stdexcept>
#include <string>

namespace srdc {

// Violated precondition or shape contract of an operation.
struct contract_error : std::invalid_argument {
  explicit contract_error(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite values reached a numerical domain that cannot absorb them.
struct numerical_error : std::runtime_error {
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input data (CSV / scene files / configs referencing data).
struct data_error : std::runtime_error {
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem failures while reading or writing artifacts.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw contract_error(msg);
}
}  // namespace detail

}  // namespace srdc
