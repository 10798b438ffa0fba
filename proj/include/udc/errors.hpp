#pragma once

#include <stdexcept>

namespace udc {

/// File-system or format failure while reading or writing artifacts.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace udc
