#include "covarcast/cli.hpp"

int main(int argc, char** argv) { return covarcast::run_command(argc, argv); }
