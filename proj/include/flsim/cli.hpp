#pragma once

namespace flsim {

// Entry point behind the `sim` binary; exposed for in-process testing.
// Exit codes: 0 success, 2 configuration error, 3 runtime error.
int cli_main(int argc, const char* const* argv);

}  // namespace flsim
