#include "sbl/cli.hpp"

int main(int argc, char** argv) { return sbl::run_cli(argc, argv); }
