#pragma once

namespace adapool {

/// Process-wide settings for executables: caps OpenMP threads from
/// ADAPOOL_THREADS (ConfigError if it is not a positive integer) and keeps
/// freed tensor buffers in the allocator instead of returning them to the
/// kernel after every step.
void configure_runtime();

}  // namespace adapool
