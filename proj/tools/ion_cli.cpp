#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  ion::cli::tune_allocator();
  return ion::cli::run(argc, argv, std::cout, std::cerr);
}
