#include <malloc.h>

#include <iostream>

#include "itdm/cli.hpp"

int main(int argc, char** argv) {
    // Training allocates the same large activation buffers every step; keep
    // them on the heap instead of mapping fresh pages each time.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return itdm::cli::main_entry(argc, argv, std::cout, std::cerr);
}
