#include "ewavq/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return ewavq::run_cli(argc, argv, std::cout, std::cerr);
}
