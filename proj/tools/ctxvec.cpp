#include "ctxvec/cli.hpp"

int main(int argc, char** argv) { return ctxvec::cli::run(argc, argv); }
