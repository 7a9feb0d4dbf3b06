#include <iostream>

#include "agtcnet/cli.hpp"

int main(int argc, char** argv) { return agtcnet::cli::run(argc, argv, std::cout, std::cerr); }
