#pragma once

#include <stdexcept>
#include <string>

namespace knlab {

// Error taxonomy mirrored by the CLI exit codes: data/io problems exit 2,
// numeric problems exit 3. Usage errors are handled by the argument parser.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct shape_error : error {
  using error::error;
};

struct data_error : error {
  using error::error;
};

struct io_error : error {
  using error::error;
};

struct numeric_error : error {
  using error::error;
};

}  // namespace knlab
