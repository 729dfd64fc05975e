#include "fsta_cli/commands.hpp"

int main(int argc, char** argv) { return fsta::cli::run(argc, argv); }
