#include "cli.hpp"

int main(int argc, char** argv) { return russ::cli::run(argc, argv); }
