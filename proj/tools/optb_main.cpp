#include "optb/cli.hpp"

int main(int argc, char** argv) { return optb::cli::run_cli(argc, argv); }
