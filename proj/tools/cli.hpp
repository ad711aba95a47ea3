#pragma once

#include <iosfwd>

namespace punchline::cli {

// Runs the punchline command line. Returns 0 on success, 1 on a usage
// error and 2 on a runtime error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace punchline::cli
