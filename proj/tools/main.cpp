#include <iostream>

#include "adsnn/cli.hpp"

int main(int argc, char** argv) { return adsnn::cli::run(argc, argv, std::cout, std::cerr); }
