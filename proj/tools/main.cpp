#include <iostream>

#include "evasion/cli.hpp"

int main(int argc, char** argv) { return evasion::cli::run(argc, argv, std::cout, std::cerr); }
