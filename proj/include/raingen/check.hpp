#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace raingen {

// Error thrown by all validation failures in this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
template <typename... Parts>
std::string format_msg(const Parts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}
}  // namespace detail

}  // namespace raingen

#define RG_CHECK(cond, ...)                                              \
  do {                                                                   \
    if (!(cond)) {                                                       \
      throw ::raingen::Error(::raingen::detail::format_msg(__VA_ARGS__)); \
    }                                                                    \
  } while (0)
