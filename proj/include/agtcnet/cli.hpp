#pragma once

#include <iosfwd>

namespace agtcnet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

// Entry point of the `agtcnet` tool; streams are injectable for tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace agtcnet::cli
