#include "cli.hpp"

int main(int argc, char** argv) { return dirmlab::run_cli(argc, argv); }
