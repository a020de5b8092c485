#include "slf/app/cli.hpp"

int main(int argc, char** argv) { return slf::app::cli_dispatch(argc, argv); }
