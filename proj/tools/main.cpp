#include <iostream>
#include <string>
#include <vector>

#include "embedlab/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return embedlab::run_cli(args, std::cout, std::cerr);
}
