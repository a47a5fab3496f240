// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "normalign/cli.hpp"

int main(int argc, char** argv) { return normalign::run_cli(argc, argv, std::cout, std::cerr); }
