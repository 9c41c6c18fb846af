// Copyright 2026 The wbnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "wbnas/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return wbnas::cli::run(args, std::cout, std::cerr);
}
