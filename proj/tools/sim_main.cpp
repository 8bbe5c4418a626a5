#include "flsim/cli.hpp"

int main(int argc, char** argv) { return flsim::cli_main(argc, argv); }
