#include <iostream>
#include <string>
#include <vector>

#include "seqenc/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return seqenc::run_cli(args, std::cout, std::cerr);
}
