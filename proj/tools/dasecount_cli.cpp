#include "dasecount/cli.hpp"

int main(int argc, char** argv) { return dasecount::cli::dispatch(argc, argv); }
