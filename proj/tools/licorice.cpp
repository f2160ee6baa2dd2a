#include "licorice/cli.hpp"

int main(int argc, char** argv) { return licorice::cli_main(argc, argv); }
