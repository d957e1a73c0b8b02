#include <iostream>

#include "dagvae/cli.hpp"

int main(int argc, char** argv) { return dagvae::run_cli(argc, argv, std::cout, std::cerr); }
