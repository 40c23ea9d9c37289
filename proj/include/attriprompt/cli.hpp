#pragma once

#include <string>
#include <vector>

namespace attriprompt {

// Entry point behind the `attriprompt` binary. Returns the process exit
// status: 0 on success, 1 on runtime failure, 2 on usage errors.
int cli_run(const std::vector<std::string>& args);

}  // namespace attriprompt
