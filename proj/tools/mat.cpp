#include <iostream>
#include <vector>

#include "mat/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mat::run_cli(std::move(args), std::cout, std::cerr);
}
