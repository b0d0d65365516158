#pragma once

namespace dirmlab {

// Entry point behind the dirmlab binary. Exit codes: 0 success, 1 usage or
// configuration error, 2 numerical failure (non-finite loss).
int run_cli(int argc, const char* const* argv);

}  // namespace dirmlab
