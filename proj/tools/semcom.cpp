#include <iostream>

#include "semcom/cli.hpp"

int main(int argc, char** argv) { return semcom::run_cli(argc, argv, std::cout, std::cerr); }
