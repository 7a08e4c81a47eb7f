#include "nsgp/cli.hpp"

int main(int argc, char** argv) { return nsgp::cli::dispatch(argc, argv); }
