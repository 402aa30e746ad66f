#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace cqil {

// Error type thrown by every contract violation in the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void check_failed(const char* cond, const char* file, int line,
                         const std::string& msg) {
  std::ostringstream os;
  os << file << ":" << line << ": check failed (" << cond << ")";
  if (!msg.empty()) os << ": " << msg;
  throw Error(os.str());
}
}  // namespace detail

}  // namespace cqil

#define CQIL_CHECK(cond)                                                \
  do {                                                                  \
    if (!(cond)) ::cqil::detail::check_failed(#cond, __FILE__, __LINE__, ""); \
  } while (0)

#define CQIL_CHECK_MSG(cond, msg)                                       \
  do {                                                                  \
    if (!(cond)) {                                                      \
      std::ostringstream cqil_os_;                                      \
      cqil_os_ << msg;                                                  \
      ::cqil::detail::check_failed(#cond, __FILE__, __LINE__, cqil_os_.str()); \
    }                                                                   \
  } while (0)
