#include <iostream>

#include "tv3s/cli.hpp"

int main(int argc, char** argv) { return tv3s::cli_run(argc, argv, std::cout, std::cerr); }
