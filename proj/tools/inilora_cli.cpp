#include "inilora/cli.hpp"

int main(int argc, char** argv) { return inilora::cli::run(argc, argv); }
