#pragma once

#include <cstdio>
#include <string>

namespace knlab {

// fixed-width %g formatting so emitted CSV/SVG bytes are reproducible
inline std::string fmt_g(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

}  // namespace knlab
