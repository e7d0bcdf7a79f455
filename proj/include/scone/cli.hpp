#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace scone {

/// Entry point of the `scone` executable. `args` excludes the program name.
/// Returns 0 on success, 1 on internal failure, 2 on usage or input errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Applies SCONE_THREADS (if set) to Eigen and OpenMP.
void apply_thread_limit();

}  // namespace scone
