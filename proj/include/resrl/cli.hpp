#pragma once

namespace resrl {

// Full command-line entry point; returns the process exit status.
int run_cli(int argc, const char* const* argv);

}  // namespace resrl
