#include "tnet/cli/commands.hpp"

int main(int argc, char** argv) { return tnet::cli::run(argc, argv); }
