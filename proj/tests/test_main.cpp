#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "gridbayes/parallel.hpp"

int main(int argc, char** argv) {
  gridbayes::tune_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
