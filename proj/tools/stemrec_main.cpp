#include <iostream>
#include <string>
#include <vector>

#include "stem/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return stem::run_cli(args, std::cout, std::cerr);
}
