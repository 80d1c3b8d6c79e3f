#include "ftbo/commands.hpp"

int main(int argc, char** argv) { return ftbo::cli::run_cli(argc, argv); }
