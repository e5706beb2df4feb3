#include <iostream>

#include "nav/cli.hpp"

int main(int argc, char** argv) {
  return nav::cli::run(argc, argv, std::cout, std::cerr);
}
