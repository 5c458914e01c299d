#include "miv/cli.hpp"

int main(int argc, char** argv) { return miv::run_cli(argc, argv); }
