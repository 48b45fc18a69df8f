#pragma once

namespace g2pm {

// Kernels exist in two flavours: a plain serial reference and an OpenMP
// version. Both produce the same values; the OpenMP path is what training
// uses, the serial path is kept for testing and benchmarking.
enum class Backend { serial, omp };

Backend default_backend();
void set_default_backend(Backend b);

// Thread count for the OpenMP backend (no-op when built without OpenMP).
void set_num_threads(int n);
int num_threads();

}  // namespace g2pm
