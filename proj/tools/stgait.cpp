#include <iostream>

#include "commands.hpp"
#include "stgait/trainer.hpp"

int main(int argc, char** argv) {
    stgait::retain_freed_memory();
    return stgait::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
