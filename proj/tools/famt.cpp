#include <iostream>

#include "famt/cli.hpp"

int main(int argc, char** argv) { return famt::cli::run(argc, argv, std::cout, std::cerr); }
