#include <iostream>

#include "tsc/cli.hpp"

int main(int argc, char** argv) { return tsc::run_cli(argc, argv, std::cout, std::cerr); }
