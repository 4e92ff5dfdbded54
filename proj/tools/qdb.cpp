#include <iostream>

#include "qdb/broker/cli.hpp"

int main(int argc, char** argv) { return qdb::broker::cli_main(argc, argv, std::cout, std::cerr, std::cin); }
