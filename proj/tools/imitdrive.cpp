#include <imitdrive/cli.hpp>

int main(int argc, char** argv) { return imitdrive::run_command(argc, argv); }
