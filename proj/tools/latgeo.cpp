#include "latgeo/cli.hpp"

int main(int argc, char** argv) { return latgeo::run_cli(argc, argv); }
