#include <malloc.h>

#include "strata/cli.hpp"

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step; keep them
  // on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return strata::run(argc, argv);
}
