#include "l2i/cli.hpp"

int main(int argc, char** argv) { return l2i::cli_main(argc, argv); }
