#include "ltcse/cli.hpp"

int main(int argc, char** argv) { return ltcse::run_cli(argc, argv); }
