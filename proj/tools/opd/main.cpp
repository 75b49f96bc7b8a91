#include "app.hpp"

int main(int argc, char** argv) { return opd::cli::run({argv + 1, argv + argc}); }
