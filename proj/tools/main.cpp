#include <iostream>

#include "gpens/cli.hpp"

int main(int argc, char** argv) { return gpens::run_cli(argc, argv, std::cout, std::cerr); }
