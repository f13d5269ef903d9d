#include "dnnc/cli.hpp"

int main(int argc, char** argv) { return dnnc::cli::run_cli(argc, argv); }
