// SPDX-License-Identifier: Apache-2.0
#include <string>
#include <vector>

#include "xlmeta/experiment.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return xlmeta::experiment::cli_main(args);
}
