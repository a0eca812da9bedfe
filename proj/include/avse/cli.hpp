// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace avse {

// Exit status: 0 success, 1 error (message on stderr), 2 partial corpus
// failure (per-item log on stderr).
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace avse
