#include "pose2mesh/cli.hpp"

#include <malloc.h>

int main(int argc, char** argv) {
  // Keep freed activation buffers in the heap instead of returning them to
  // the kernel after every training step.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  return p2m::run_cli(argc, argv);
}
