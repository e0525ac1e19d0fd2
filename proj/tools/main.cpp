#include "lbam/cli.hpp"

int main(int argc, char** argv) { return lbam::cli_main(argc, argv); }
