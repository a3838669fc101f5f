#include "grammage/cli.hpp"

int main(int argc, char** argv) { return grammage::cli::run(argc, argv); }
