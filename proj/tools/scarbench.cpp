#include <iostream>
#include <string>
#include <vector>

#include "scarbench/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return scarbench::cli::run(args, std::cout, std::cerr);
}
