#ifndef SPLITPLOT_CLI_HPP
#define SPLITPLOT_CLI_HPP

#include <iostream>

namespace splitplot {

// Parses argv and runs one subcommand: test | simulate | oracle | gen | overlap.
// Returns 0 on success, 1 on usage errors, 2 on data errors.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace splitplot

#endif
