#include "cli.hpp"

int main(int argc, char** argv) { return punchline::cli::dispatch(argc, argv); }
