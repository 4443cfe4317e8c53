#include "semflow/cli.hpp"

int main(int argc, char** argv) { return semflow::cli_main(argc, argv); }
