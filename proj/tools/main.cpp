#include <iostream>

#include "flashcast/commands.hpp"

int main(int argc, char** argv) { return flashcast::run_cli(argc, argv, std::cout, std::cerr); }
