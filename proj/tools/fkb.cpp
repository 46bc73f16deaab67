#include <iostream>
#include <string>
#include <vector>

#include "fkb/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fkb::cli::parse_and_dispatch(args, std::cerr);
}
