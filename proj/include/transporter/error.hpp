#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace transporter {

// Invalid parameters or configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite loss or similar numerical breakdown (CLI exit code 3).
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Malformed or truncated file. Carries the zero-based record index when the
// failure is attributable to a record, or npos for header-level problems.
class FormatError : public std::runtime_error {
  public:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    FormatError(const std::string& what, std::size_t record = npos)
        : std::runtime_error(record == npos ? what : "record " + std::to_string(record) + ": " + what),
          record_(record)
    {
    }

    std::size_t record() const noexcept { return record_; }

  private:
    std::size_t record_;
};

}  // namespace transporter
