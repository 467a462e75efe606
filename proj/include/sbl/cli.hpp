#pragma once

#include <string>
#include <vector>

namespace sbl {

/// Exit codes: 0 ok, 1 unexpected failure, 2 config error, 3 data error,
/// 4 stale salience stats.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace sbl
