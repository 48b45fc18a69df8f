#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "g2pm/parallel.hpp"
#include "g2pm/tensor.hpp"

// Hot loops of the model. Every kernel accumulates into its output (C += ...),
// so callers zero-initialise or pass an existing gradient buffer.
namespace g2pm::kernels {

using nn::Real;

// Multi-head attention over independent row segments: segment s covers rows
// [offsets[s], offsets[s+1]) and only attends within itself.
struct AttentionShape {
  std::size_t dim = 0;    // model width d
  std::size_t heads = 1;  // d % heads == 0
  std::span<const std::size_t> offsets;
};

// Start of each segment's softmax block in the probability buffer (heads * len^2
// entries per segment); the final element is the total size.
std::vector<std::size_t> attention_prob_offsets(std::span<const std::size_t> offsets, std::size_t heads);

namespace serial {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
void attention_forward(const AttentionShape& s, const Real* q, const Real* k, const Real* v, Real* out,
                       Real* probs);
void attention_backward(const AttentionShape& s, const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk, Real* dv);
}  // namespace serial

namespace omp {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
void attention_forward(const AttentionShape& s, const Real* q, const Real* k, const Real* v, Real* out,
                       Real* probs);
void attention_backward(const AttentionShape& s, const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk, Real* dv);
}  // namespace omp

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(Backend be, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(Backend be, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(Backend be, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
void attention_forward(Backend be, const AttentionShape& s, const Real* q, const Real* k, const Real* v,
                       Real* out, Real* probs);
void attention_backward(Backend be, const AttentionShape& s, const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk, Real* dv);

}  // namespace g2pm::kernels
