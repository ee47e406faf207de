#include "structsum/cli.hpp"

int main(int argc, char** argv) { return structsum::cli::run(argc, argv); }
