#include "pgc/cli.hpp"

int main(int argc, char** argv) { return pgc::cli::run(argc, argv); }
