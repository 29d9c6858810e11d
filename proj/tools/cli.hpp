#pragma once

#include <ostream>

namespace osn::cli {

// Entry point shared by the executable and the tests. Returns a process exit
// code; diagnostics go to `err`, progress to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace osn::cli
