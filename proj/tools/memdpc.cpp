#include <iostream>

#include "memdpc/cli/commands.hpp"

int main(int argc, char** argv) {
  return memdpc::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
