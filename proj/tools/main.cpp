#include "arbiter/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return arbiter::cli::run(argc, argv, std::cout, std::cerr); }
