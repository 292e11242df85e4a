#include "idf/cli.hpp"

int main(int argc, char** argv) { return idf::run_cli(argc, argv); }
