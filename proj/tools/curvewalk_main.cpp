#include "curvewalk/cli.hpp"

int main(int argc, char** argv) { return curvewalk::cli_main(argc, argv); }
