#include "cli.hpp"

int main(int argc, char** argv) { return ivbart::cli::cli_main(argc, argv); }
