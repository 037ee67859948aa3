#include "mixdpo/cli.hpp"

int main(int argc, char** argv) {
    return mixdpo::run_cli(argc, argv);
}
