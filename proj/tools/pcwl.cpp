#include "pcwl/cli.hpp"

int main(int argc, char** argv) { return pcwl::cli::run(argc, argv); }
