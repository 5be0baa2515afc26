#include "nbfa/cli.hpp"

#include <iostream>

int main(int argc, char **argv) { return nbfa::run_cli(argc, argv, std::cout, std::cerr); }
