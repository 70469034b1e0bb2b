#include "adapool/runtime.hpp"

#include <malloc.h>
#include <omp.h>

#include <cstdlib>
#include <string>

#include "adapool/error.hpp"

namespace adapool {

void configure_runtime() {
  if (const char* env = std::getenv("ADAPOOL_THREADS"); env && *env) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n <= 0)
      throw ConfigError(std::string("ADAPOOL_THREADS must be a positive integer, got '") + env + "'");
    omp_set_num_threads(static_cast<int>(n));
  }
  // Activation buffers are a few hundred KB and die every step; served from
  // fresh mappings each one costs a round of page faults.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace adapool
