#include <iostream>

#include "lexchain/cli.hpp"

int main(int argc, char** argv) {
  return lexchain::cli::run(argc, argv, std::cout, std::cerr);
}
