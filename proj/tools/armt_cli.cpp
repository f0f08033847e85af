#include <iostream>

#include "armt/driver.hpp"

int main(int argc, char** argv) { return armt::cli_dispatch(argc, argv, std::cout, std::cerr); }
