#include "tsvr/cli.hpp"

int main(int argc, char** argv) { return tsvr::run_cli(argc, argv); }
