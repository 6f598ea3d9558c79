#include "cenet/cli/commands.hpp"

int main(int argc, char** argv)
{
    cenet::train::tune_allocator();
    return cenet::cli::run(argc, argv);
}
