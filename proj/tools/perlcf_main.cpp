#include <iostream>

#include "perlcf/cli.hpp"

int main(int argc, char** argv) { return perlcf::run_cli(argc, argv, std::cout, std::cerr); }
