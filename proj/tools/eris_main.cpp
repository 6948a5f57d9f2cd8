#include "eris/cli.hpp"

int main(int argc, char** argv) { return eris::cli::run(argc, argv); }
