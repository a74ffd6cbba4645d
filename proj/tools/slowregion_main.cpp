#include "slowregion/cli.hpp"

int main(int argc, char** argv) { return slowregion::cli::dispatch(argc, argv); }
