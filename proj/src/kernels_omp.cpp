#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "g2pm/kernels.hpp"

namespace g2pm::kernels::omp {

namespace {
using Index = std::ptrdiff_t;

// Contiguous copy of one head's columns for rows [r0, r0+len).
void gather_head(const Real* src, std::size_t d, std::size_t r0, std::size_t len, std::size_t c0,
                 std::size_t dh, Real* dst) {
  for (std::size_t i = 0; i < len; ++i) std::copy_n(src + (r0 + i) * d + c0, dh, dst + i * dh);
}
}  // namespace

// Each output row is summed in a zeroed scratch row and then added to C, so the
// rounding matches the serial dot products even when C is nonzero.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
#pragma omp parallel
  {
    std::vector<Real> acc(n);
#pragma omp for schedule(static)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const Real* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const Real aip = ai[p];
        const Real* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += aip * bp[j];
      }
      Real* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += acc[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  // Transposing B turns the row dot products into axpy updates that vectorise.
  std::vector<Real> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, n, k, a, bt.data(), c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
#pragma omp parallel
  {
    std::vector<Real> acc(n);
#pragma omp for schedule(static)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const Real api = a[p * m + i];
        const Real* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += api * bp[j];
      }
      Real* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += acc[j];
    }
  }
}

void attention_forward(const AttentionShape& s, const Real* q, const Real* k, const Real* v, Real* out,
                       Real* probs) {
  const std::size_t d = s.dim, heads = s.heads, dh = d / heads;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
  const auto poff = attention_prob_offsets(s.offsets, heads);
  const Index tasks = static_cast<Index>((s.offsets.size() - 1) * heads);
#pragma omp parallel
  {
    std::vector<Real> qh, kh, vh, oh;
#pragma omp for schedule(dynamic, 8)
    for (Index t = 0; t < tasks; ++t) {
      const std::size_t seg = static_cast<std::size_t>(t) / heads, h = static_cast<std::size_t>(t) % heads;
      const std::size_t r0 = s.offsets[seg], len = s.offsets[seg + 1] - r0, c0 = h * dh;
      if (len == 0) continue;
      qh.resize(len * dh);
      kh.resize(len * dh);
      vh.resize(len * dh);
      oh.assign(len * dh, 0.0);
      gather_head(q, d, r0, len, c0, dh, qh.data());
      gather_head(k, d, r0, len, c0, dh, kh.data());
      gather_head(v, d, r0, len, c0, dh, vh.data());
      Real* p = probs + poff[seg] + h * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        Real* pi = p + i * len;
        for (std::size_t j = 0; j < len; ++j) {
          Real acc = 0;
          for (std::size_t c = 0; c < dh; ++c) acc += qh[i * dh + c] * kh[j * dh + c];
          pi[j] = acc * scale;
        }
        const Real mx = *std::max_element(pi, pi + len);
        Real sum = 0;
        for (std::size_t j = 0; j < len; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          sum += pi[j];
        }
        for (std::size_t j = 0; j < len; ++j) pi[j] /= sum;
        Real* oi = oh.data() + i * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const Real pij = pi[j];
          const Real* vj = vh.data() + j * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
        }
      }
      for (std::size_t i = 0; i < len; ++i) {
        Real* dst = out + (r0 + i) * d + c0;
        for (std::size_t c = 0; c < dh; ++c) dst[c] += oh[i * dh + c];
      }
    }
  }
}

void attention_backward(const AttentionShape& s, const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk, Real* dv) {
  const std::size_t d = s.dim, heads = s.heads, dh = d / heads;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
  const auto poff = attention_prob_offsets(s.offsets, heads);
  const Index tasks = static_cast<Index>((s.offsets.size() - 1) * heads);
#pragma omp parallel
  {
    std::vector<Real> qh, kh, vh, gh, ds, gq, gk, gv;
#pragma omp for schedule(dynamic, 8)
    for (Index t = 0; t < tasks; ++t) {
      const std::size_t seg = static_cast<std::size_t>(t) / heads, h = static_cast<std::size_t>(t) % heads;
      const std::size_t r0 = s.offsets[seg], len = s.offsets[seg + 1] - r0, c0 = h * dh;
      if (len == 0) continue;
      qh.resize(len * dh);
      kh.resize(len * dh);
      vh.resize(len * dh);
      gh.resize(len * dh);
      ds.resize(len * len);
      gq.assign(len * dh, 0.0);
      gk.assign(len * dh, 0.0);
      gv.assign(len * dh, 0.0);
      gather_head(q, d, r0, len, c0, dh, qh.data());
      gather_head(k, d, r0, len, c0, dh, kh.data());
      gather_head(v, d, r0, len, c0, dh, vh.data());
      gather_head(dout, d, r0, len, c0, dh, gh.data());
      const Real* p = probs + poff[seg] + h * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        Real dot = 0;
        for (std::size_t j = 0; j < len; ++j) {
          Real dp = 0;
          for (std::size_t c = 0; c < dh; ++c) dp += gh[i * dh + c] * vh[j * dh + c];
          ds[i * len + j] = dp;
          dot += dp * p[i * len + j];
        }
        for (std::size_t j = 0; j < len; ++j) ds[i * len + j] = p[i * len + j] * (ds[i * len + j] - dot);
      }
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < len; ++j) {
          const Real pij = p[i * len + j], sij = ds[i * len + j];
          for (std::size_t c = 0; c < dh; ++c) {
            gv[j * dh + c] += pij * gh[i * dh + c];
            gq[i * dh + c] += sij * kh[j * dh + c];
            gk[j * dh + c] += sij * qh[i * dh + c];
          }
        }
      }
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t c = 0; c < dh; ++c) {
          dq[(r0 + i) * d + c0 + c] += scale * gq[i * dh + c];
          dk[(r0 + i) * d + c0 + c] += scale * gk[i * dh + c];
          dv[(r0 + i) * d + c0 + c] += gv[i * dh + c];
        }
      }
    }
  }
}

}  // namespace g2pm::kernels::omp
