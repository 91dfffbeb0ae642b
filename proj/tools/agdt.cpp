// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <string>
#include <vector>

#include <agdt/cli.h>

int main(int argc, char **argv) {
  std::vector<std::string> args(argv, argv + argc);
  return agdt::run_cli(args, std::cout, std::cerr);
}
