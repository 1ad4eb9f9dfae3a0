#include <iostream>

#include "hacseg/cli.hpp"

int main(int argc, char** argv) { return hacseg::cli::run(argc, argv, std::cout, std::cerr); }
