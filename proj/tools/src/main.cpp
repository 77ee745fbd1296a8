#include <iostream>
#include <string>
#include <vector>

#include "anmi_cli/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return anmi::cli::run(args, std::cout, std::cerr);
}
