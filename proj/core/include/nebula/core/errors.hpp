#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nebula {

// Caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed file (missing property, bad magic, unsupported layout).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed file carrying bad values (NaN, cycles).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wire or payload decoding failure. offset() is the byte position where decoding stopped.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(const std::string& what, std::size_t offset = 0)
      : std::runtime_error(what + " (offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

#define NEBULA_EXPECT(cond, msg)                  \
  do {                                            \
    if (!(cond)) throw ::nebula::ContractViolation(msg); \
  } while (0)

}  // namespace nebula
