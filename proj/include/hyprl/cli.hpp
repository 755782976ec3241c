#pragma once

namespace hyprl::cli {

// Full command-line front-end. Exit codes: 0 success, 1 unexpected error,
// 2 invalid configuration or input, 3 training divergence.
int cli_main(int argc, const char* const* argv);

}  // namespace hyprl::cli
