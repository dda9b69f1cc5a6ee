#pragma once

#include <ostream>

namespace minmt::cli {

// Exit codes: 0 success, 1 usage or config error, 2 data or model error.
// Errors go to `err` as one line "error:<category>: <message>".
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace minmt::cli
