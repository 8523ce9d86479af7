#include "inbetween/cli.hpp"

int main(int argc, char** argv) { return inbetween::cli::run(argc, argv); }
