#include "npis/cli.hpp"

int main(int argc, char** argv) { return npis::cli::parse_and_dispatch(argc, argv); }
