#include <iostream>

#include "cli/runner.hpp"

int main(int argc, char** argv) { return vmpo::cli::run(argc, argv, std::cout, std::cerr); }
