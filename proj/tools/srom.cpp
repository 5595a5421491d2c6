#include "srom/cli.hpp"

int main(int argc, char** argv) { return srom::cli::run(argc, argv); }
