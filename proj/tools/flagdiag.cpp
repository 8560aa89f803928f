// Copyright 2026 The flagdiag Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "flagdiag/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return flagdiag::run_cli(args, std::cout, std::cerr);
}
