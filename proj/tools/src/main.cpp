#include <iostream>

#include "landmatch_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return landmatch::cli::run(args, std::cout, std::cerr);
}
