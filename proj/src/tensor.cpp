#include "vle/tensor.hpp"

#include <sstream>

namespace vle {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    require(d >= 0, "negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

}  // namespace vle
