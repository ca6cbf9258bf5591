#include <string>
#include <vector>

#include "dpet/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dpet::run_cli(args);
}
