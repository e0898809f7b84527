#include "flowuq/cli.hpp"

int main(int argc, char** argv) { return flowuq::cli::run(argc, argv); }
