#pragma once

#include <iosfwd>

namespace dagvae {

// Entry point of the dagvae executable. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dagvae
