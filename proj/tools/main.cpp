#include "commands.hpp"

int main(int argc, char** argv) {
    return levybt::cli::run(argc, argv);
}
