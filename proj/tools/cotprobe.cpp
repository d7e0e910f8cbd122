#include "cotprobe/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return cotprobe::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
