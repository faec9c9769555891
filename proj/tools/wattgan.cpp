#include "wattgan/cli.hpp"

int main(int argc, char** argv) { return wattgan::cli::run(argc, argv); }
