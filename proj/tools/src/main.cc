#include <iostream>

#include "lsme_cli/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lsme::cli::Run(args, std::cout, std::cerr);
}
