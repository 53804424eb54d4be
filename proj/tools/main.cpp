#include "i2m/cli/cli.hpp"

int main(int argc, char** argv) { return i2m::cli::main(argc, argv); }
