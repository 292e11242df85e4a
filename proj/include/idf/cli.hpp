// Command-line surface: add-noise, denoise, train, eval, bench, param-count.
#pragma once

namespace idf {

// Exit codes: 0 success, 2 usage, 3 I/O, 4 validation.
int run_cli(int argc, const char* const* argv);

}  // namespace idf
