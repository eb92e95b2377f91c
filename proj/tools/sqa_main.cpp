#include "sqa/cli.hpp"

int main(int argc, char** argv) { return sqa::cli_dispatch(argc, argv); }
