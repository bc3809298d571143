#pragma once

#include <ostream>

namespace famt::cli {

// Entry point of the famt tool. Returns 0 on success and 2 on any usage,
// configuration, format or runtime error (the message goes to `err`).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace famt::cli
