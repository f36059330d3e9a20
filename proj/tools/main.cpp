#include "selfprobe/cli.hpp"

int main(int argc, char** argv) { return selfprobe::cli::main_entry(argc, argv); }
