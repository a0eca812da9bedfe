// SPDX-License-Identifier: Apache-2.0

#include "avse/cli.hpp"

int main(int argc, char** argv) { return avse::run_cli(argc, argv); }
