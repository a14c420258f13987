#include "flexipatch/cli.hpp"

int main(int argc, char** argv) { return flexipatch::cli_main(argc, argv); }
