// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "orthotune/cli.hpp"

int main(int argc, char** argv) { return orthotune::run_cli(argc, argv, std::cout, std::cerr); }
