#pragma once

#include <string>
#include <vector>

namespace carrierscope {

// Full command dispatcher; args exclude the program name. Returns the process
// exit code: 0 ok, 2 usage, 3 I/O, 4 validation.
int run_cli(const std::vector<std::string>& args);

}  // namespace carrierscope
