#include <iostream>

#include "ptmm/cli.hpp"

int main(int argc, char** argv) { return ptmm::run_cli(argc, argv, std::cout, std::cerr); }
