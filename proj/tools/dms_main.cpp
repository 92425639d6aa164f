#include <iostream>
#include <string>
#include <vector>

#include "dms/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dms::run_cli(args, std::cout, std::cerr);
}
