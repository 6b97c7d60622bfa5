#include "mvss/commands.hpp"

int main(int argc, char** argv) { return mvss::cli::run_cli(argc, argv); }
