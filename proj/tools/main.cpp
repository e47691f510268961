#include "cli.hpp"

int main(int argc, char** argv) { return cocodr::cli::main(argc, argv); }
