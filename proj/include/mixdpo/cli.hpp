#pragma once

namespace mixdpo {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
int run_cli(int argc, const char* const* argv);

}  // namespace mixdpo
