#include <splitplot/cli.hpp>

int main(int argc, char** argv) { return splitplot::cli_dispatch(argc, argv); }
