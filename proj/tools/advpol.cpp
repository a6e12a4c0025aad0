#include "advpol/cli.hpp"

int main(int argc, char** argv) { return advpol::cli::run(argc, argv); }
