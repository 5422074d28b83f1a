#include "resrl/cli.hpp"

int main(int argc, char** argv) { return resrl::run_cli(argc, argv); }
