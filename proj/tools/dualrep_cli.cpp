#include "dualrep/commands.hpp"

int main(int argc, char** argv) { return dualrep::cli_main(argc, argv); }
