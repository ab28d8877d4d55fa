#include <iostream>
#include <string>
#include <vector>

#include "nsn2n/cli.hpp"

int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return nsn2n::cli::run(args, std::cout, std::cerr);
}
