#include "glsr/cli.hpp"

int main(int argc, char** argv) { return glsr::dispatch(argc, argv); }
