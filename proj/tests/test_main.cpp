#define DOCTEST_CONFIG_IMPLEMENT

#include <doctest.h>

#include "mi3d/runtime.hpp"

int main(int argc, char** argv) {
  mi3d::tune_allocator();
  return doctest::Context(argc, argv).run();
}
