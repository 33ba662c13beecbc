#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace qmri::cli {

// Exit codes: 0 success, 1 numeric or runtime failure, 2 usage or config error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qmri::cli
