#include <iostream>

#include "seunet/cli.hpp"

int main(int argc, char** argv) { return seunet::run_cli(argc, argv, std::cout, std::cerr); }
