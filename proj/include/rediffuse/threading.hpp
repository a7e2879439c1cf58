#pragma once

namespace rediffuse {

// Applies the REDIFFUSE_THREADS cap (if set and > 0) to the OpenMP runtime.
// Call once at program start; safe to call when built without OpenMP.
void init_threading();

// Threads the kernels will use after init_threading().
int thread_count();

}  // namespace rediffuse
