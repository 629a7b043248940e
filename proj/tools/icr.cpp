#include "icr/cli.hpp"

int main(int argc, char** argv) { return icr::dispatch(argc, argv); }
