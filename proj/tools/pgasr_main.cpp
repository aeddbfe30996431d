#include "pgasr/cli.hpp"

int main(int argc, char** argv) { return pgasr::cli::main(argc, argv); }
