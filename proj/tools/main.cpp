#include "llmbroker/cli.hpp"

#include <iostream>

int main(int argc, char ** argv) {
    return llmbroker::run_cli(argc, argv, std::cout, std::cerr);
}
