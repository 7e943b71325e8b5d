#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace auralcnn::cli {

/// One command-line invocation; `args[0]` is the program name. Returns the
/// process exit code: 0 when every requested artifact was produced.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace auralcnn::cli
