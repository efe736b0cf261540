#pragma once

// Internal: per-ISA kernel tables. Each backend fills one KernelTable; the
// dispatcher in kernels.cpp selects the active table at startup.

namespace mito::kernels::detail {

struct KernelTable {
    void (*gemm_acc)(const float*, const float*, float*, int, int, int) = nullptr;
    void (*gemm_abt_acc)(const float*, const float*, float*, int, int, int) = nullptr;
    void (*relu)(const float*, float*, int) = nullptr;
    void (*relu_backward)(const float*, const float*, float*, int) = nullptr;
    void (*axpy)(float, const float*, float*, int) = nullptr;
    void (*scale)(float*, float, int) = nullptr;
    float (*dot)(const float*, const float*, int) = nullptr;
    float (*sum)(const float*, int) = nullptr;
    void (*adam_step)(float*, float*, float*, const float*, int,
                      float, float, float, float, float, float) = nullptr;
    void (*sgd_momentum_step)(float*, float*, const float*, int, float, float) = nullptr;
};

const KernelTable& scalar_table();

// Returns nullptr when the binary or the CPU lacks AVX2 support.
const KernelTable* avx2_table();

}  // namespace mito::kernels::detail
