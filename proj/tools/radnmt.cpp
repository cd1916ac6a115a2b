#include "radnmt/cli.hpp"

int main(int argc, char** argv) { return radnmt::dispatch(argc, argv); }
