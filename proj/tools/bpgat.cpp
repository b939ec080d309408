#include <iostream>
#include <string>
#include <vector>

#include "bpgat/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return bpgat::run_cli(args, std::cout, std::cerr);
}
