#include "lomix/cli.hpp"

int main(int argc, char** argv) { return lomix::cli::run(argc, argv); }
