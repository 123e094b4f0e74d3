#include "covclust/cli.hpp"

int main(int argc, char** argv) { return covclust::cli::run(argc, argv); }
