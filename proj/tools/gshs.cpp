#include "gshs/cli.hpp"

int main(int argc, char** argv) { return gshs::cli::main(argc, argv); }
