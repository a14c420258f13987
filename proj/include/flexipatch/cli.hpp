#pragma once

namespace flexipatch {

// flexipatch <verb> [--config PATH] [--set key=value]... [--out DIR] [--seed N] [args...]
// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.
int cli_main(int argc, const char* const* argv);

}  // namespace flexipatch
