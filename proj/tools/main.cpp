#include "hyprl/cli.hpp"

int main(int argc, char** argv) { return hyprl::cli::cli_main(argc, argv); }
