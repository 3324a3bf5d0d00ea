#ifndef CURVEWALK_CLI_HPP_
#define CURVEWALK_CLI_HPP_

namespace curvewalk {

// Command-line front end. Exit codes: 0 ok, 1 verification failure,
// 2 usage or input error, 3 numeric divergence.
int cli_main(int argc, const char* const* argv);

}  // namespace curvewalk

#endif  // CURVEWALK_CLI_HPP_
