#include "tblab/cli.hpp"

int main(int argc, char** argv) { return tblab::cli::main(argc, argv); }
