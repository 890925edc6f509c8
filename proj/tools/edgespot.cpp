#include "edgespot/cli.hpp"

int main(int argc, char** argv) { return edgespot::run_cli(argc, argv); }
