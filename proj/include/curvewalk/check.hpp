#ifndef CURVEWALK_CHECK_HPP_
#define CURVEWALK_CHECK_HPP_

#include <sstream>
#include <stdexcept>
#include <string>

namespace curvewalk {

// Raised for malformed file inputs; carries a 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Raised when a loss turns non-finite during training.
class DivergenceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
[[noreturn]] inline void check_fail(const char* expr, const char* file,
                                    int line, const std::string& msg) {
  std::ostringstream os;
  os << "check failed: " << expr << " (" << file << ":" << line << ")";
  if (!msg.empty()) os << " " << msg;
  throw std::invalid_argument(os.str());
}
}  // namespace detail

}  // namespace curvewalk

#define CW_CHECK(cond, msg)                                              \
  do {                                                                   \
    if (!(cond)) {                                                       \
      std::ostringstream cw_os_;                                         \
      cw_os_ << msg;                                                     \
      ::curvewalk::detail::check_fail(#cond, __FILE__, __LINE__,         \
                                      cw_os_.str());                     \
    }                                                                    \
  } while (0)

#endif  // CURVEWALK_CHECK_HPP_
