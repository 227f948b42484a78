#include "matchctl/cli.hpp"

int main(int argc, char** argv) { return matchctl::run(argc, argv); }
