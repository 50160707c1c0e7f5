// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return mspnf::run_cli(argc, argv, std::cout, std::cerr); }
