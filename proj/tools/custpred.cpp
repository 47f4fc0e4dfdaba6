#include <iostream>

#include "custpred/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return custpred::run_cli(args, std::cout, std::cerr);
}
