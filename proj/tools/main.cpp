#include <malloc.h>

#include <iostream>
#include <string>
#include <vector>

#include "shakenorm/cli/commands.hpp"

int main(int argc, char** argv) {
  // Training allocates and frees many large short-lived tensors; keep them on the heap
  // instead of paying an mmap/munmap round trip each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  std::vector<std::string> args(argv + 1, argv + argc);
  return shakenorm::cli::run_cli(args, std::cout, std::cerr);
}
