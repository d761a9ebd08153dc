#include <iostream>

#include "featup/cli.hpp"

int main(int argc, char** argv) { return featup::run_cli(argc, argv, std::cout, std::cerr); }
