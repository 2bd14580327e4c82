#include <iostream>

#include "emapg/cli/cli.hpp"

int main(int argc, char** argv) { return emapg::cli::run(argc, argv, std::cout, std::cerr); }
