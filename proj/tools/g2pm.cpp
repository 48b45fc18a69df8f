#include "g2pm/cli.hpp"

extern char** environ;

int main(int argc, char** argv) { return g2pm::cli::cli_main(argc, argv, environ); }
