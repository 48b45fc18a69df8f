// Straightforward reference kernels. Kept deliberately naive; the OpenMP
// versions in kernels_omp.cpp are checked against these.
#include <algorithm>
#include <cmath>

#include "g2pm/kernels.hpp"

namespace g2pm::kernels {

std::vector<std::size_t> attention_prob_offsets(std::span<const std::size_t> offsets, std::size_t heads) {
  std::vector<std::size_t> out(offsets.empty() ? 1 : offsets.size(), 0);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t len = offsets[s + 1] - offsets[s];
    out[s + 1] = out[s] + heads * len * len;
  }
  return out;
}

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] += acc;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] += acc;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] += acc;
    }
  }
}

void attention_forward(const AttentionShape& s, const Real* q, const Real* k, const Real* v, Real* out,
                       Real* probs) {
  const std::size_t d = s.dim, dh = d / s.heads;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
  const auto poff = attention_prob_offsets(s.offsets, s.heads);
  for (std::size_t seg = 0; seg + 1 < s.offsets.size(); ++seg) {
    const std::size_t r0 = s.offsets[seg], len = s.offsets[seg + 1] - r0;
    for (std::size_t h = 0; h < s.heads; ++h) {
      Real* p = probs + poff[seg] + h * len * len;
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < len; ++j) {
          Real acc = 0;
          for (std::size_t c = 0; c < dh; ++c) acc += q[(r0 + i) * d + c0 + c] * k[(r0 + j) * d + c0 + c];
          p[i * len + j] = acc * scale;
        }
        Real mx = p[i * len];
        for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, p[i * len + j]);
        Real sum = 0;
        for (std::size_t j = 0; j < len; ++j) {
          p[i * len + j] = std::exp(p[i * len + j] - mx);
          sum += p[i * len + j];
        }
        for (std::size_t j = 0; j < len; ++j) p[i * len + j] /= sum;
        for (std::size_t c = 0; c < dh; ++c) {
          Real acc = 0;
          for (std::size_t j = 0; j < len; ++j) acc += p[i * len + j] * v[(r0 + j) * d + c0 + c];
          out[(r0 + i) * d + c0 + c] += acc;
        }
      }
    }
  }
}

void attention_backward(const AttentionShape& s, const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk, Real* dv) {
  const std::size_t d = s.dim, dh = d / s.heads;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
  const auto poff = attention_prob_offsets(s.offsets, s.heads);
  for (std::size_t seg = 0; seg + 1 < s.offsets.size(); ++seg) {
    const std::size_t r0 = s.offsets[seg], len = s.offsets[seg + 1] - r0;
    std::vector<Real> ds(len * len);
    for (std::size_t h = 0; h < s.heads; ++h) {
      const Real* p = probs + poff[seg] + h * len * len;
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < len; ++i) {
        Real dot = 0;
        for (std::size_t j = 0; j < len; ++j) {
          Real dp = 0;
          for (std::size_t c = 0; c < dh; ++c) dp += dout[(r0 + i) * d + c0 + c] * v[(r0 + j) * d + c0 + c];
          ds[i * len + j] = dp;
          dot += dp * p[i * len + j];
        }
        for (std::size_t j = 0; j < len; ++j) ds[i * len + j] = p[i * len + j] * (ds[i * len + j] - dot);
      }
      for (std::size_t j = 0; j < len; ++j) {
        for (std::size_t c = 0; c < dh; ++c) {
          Real acc = 0;
          for (std::size_t i = 0; i < len; ++i) acc += p[i * len + j] * dout[(r0 + i) * d + c0 + c];
          dv[(r0 + j) * d + c0 + c] += acc;
        }
      }
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t c = 0; c < dh; ++c) {
          Real acc = 0;
          for (std::size_t j = 0; j < len; ++j) acc += ds[i * len + j] * k[(r0 + j) * d + c0 + c];
          dq[(r0 + i) * d + c0 + c] += scale * acc;
        }
      }
      for (std::size_t j = 0; j < len; ++j) {
        for (std::size_t c = 0; c < dh; ++c) {
          Real acc = 0;
          for (std::size_t i = 0; i < len; ++i) acc += ds[i * len + j] * q[(r0 + i) * d + c0 + c];
          dk[(r0 + j) * d + c0 + c] += scale * acc;
        }
      }
    }
  }
}

}  // namespace serial

void gemm_nn(Backend be, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  be == Backend::omp ? omp::gemm_nn(m, n, k, a, b, c) : serial::gemm_nn(m, n, k, a, b, c);
}
void gemm_nt(Backend be, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  be == Backend::omp ? omp::gemm_nt(m, n, k, a, b, c) : serial::gemm_nt(m, n, k, a, b, c);
}
void gemm_tn(Backend be, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  be == Backend::omp ? omp::gemm_tn(m, n, k, a, b, c) : serial::gemm_tn(m, n, k, a, b, c);
}
void attention_forward(Backend be, const AttentionShape& s, const Real* q, const Real* k, const Real* v,
                       Real* out, Real* probs) {
  be == Backend::omp ? omp::attention_forward(s, q, k, v, out, probs)
                     : serial::attention_forward(s, q, k, v, out, probs);
}
void attention_backward(Backend be, const AttentionShape& s, const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk, Real* dv) {
  be == Backend::omp ? omp::attention_backward(s, q, k, v, probs, dout, dq, dk, dv)
                     : serial::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
}

}  // namespace g2pm::kernels
