#include "multimage/cli.hpp"

int main(int argc, char** argv) { return multimage::cli::run(argc, argv); }
