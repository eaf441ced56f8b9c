#pragma once

#include <ostream>

namespace tv3s {

// Full command-line entry point (argv[0] included). Returns the process exit
// code: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure,
// 1 anything else. Streams are injected so tests can run commands in-process.
int cli_run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tv3s
