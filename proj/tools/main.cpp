#include "cli.hpp"

int main(int argc, char** argv) { return mtbd::cli::run_cli(argc, argv); }
