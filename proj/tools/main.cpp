#include <iostream>

#include "ternlm/cli.hpp"

int main(int argc, char** argv) {
  return ternlm::cli::run({argv, argv + argc}, std::cout, std::cerr);
}
