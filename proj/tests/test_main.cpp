#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "piddm/exec.hpp"

int main(int argc, char** argv) {
    // Unit tests run on the OpenMP path by default; the parallel suite
    // compares against serial explicitly.
    piddm::exec::set_mode(piddm::exec::Mode::openmp);
    return doctest::Context(argc, argv).run();
}
