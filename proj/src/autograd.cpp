#include "g2pm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "g2pm/error.hpp"
#include "g2pm/kernels.hpp"

namespace g2pm::nn {

namespace {

thread_local bool t_grad_enabled = true;
bool g_checked = false;

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

std::string shapes(const Var& a, const Var& b) {
  return to_string(a.shape()) + " vs " + to_string(b.shape());
}

Var make_result(Tensor value, std::vector<Var> inputs, const char* op, BackwardFn fn) {
  if (g_checked && !value.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
  bool track = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) track = track || (in && in.requires_grad());
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (track) {
    node->requires_grad = true;
    for (auto& in : inputs) node->parents.push_back(in ? in.node() : nullptr);
    node->backward = std::move(fn);
  }
  return Var::from_node(std::move(node));
}

bool wants(const NodePtr& p) { return p && p->requires_grad; }

Tensor mat(std::size_t r, std::size_t c) { return Tensor::matrix(r, c); }

Backend be() { return default_backend(); }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  auto& buf = grad_buffer();
  if (buf.size() != g.size()) throw ShapeError("gradient size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() { node_->grad = Tensor(node_->value.shape()); }
void Var::clear_grad() { node_->grad = Tensor(); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

void set_checked_mode(bool on) { g_checked = on; }
bool checked_mode() { return g_checked; }

void backward(const Var& loss) {
  if (!loss) throw ContractError("backward on an empty Var");
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->grad, n->parents);
  }
}

// ---- ops ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul", shapes(a, b));
  Tensor out = mat(m, n);
  kernels::gemm_nn(be(), m, n, k, a.value().ptr(), b.value().ptr(), out.ptr());
  return make_result(std::move(out), {a, b}, "matmul",
                     [m, n, k](const Tensor& g, const std::vector<NodePtr>& p) {
                       if (wants(p[0])) kernels::gemm_nt(be(), m, k, n, g.ptr(), p[1]->value.ptr(), p[0]->grad_buffer().ptr());
                       if (wants(p[1])) kernels::gemm_tn(be(), k, n, m, p[0]->value.ptr(), g.ptr(), p[1]->grad_buffer().ptr());
                     });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto m = x.rows(), in = x.cols(), out_dim = w.cols();
  require(w.rows() == in, "linear", shapes(x, w));
  if (b) require(b.value().size() == out_dim, "linear bias", shapes(w, b));
  Tensor out = mat(m, out_dim);
  if (b) {
    for (std::size_t r = 0; r < m; ++r) std::copy_n(b.value().ptr(), out_dim, out.ptr() + r * out_dim);
  }
  kernels::gemm_nn(be(), m, out_dim, in, x.value().ptr(), w.value().ptr(), out.ptr());
  return make_result(std::move(out), {x, w, b}, "linear",
                     [m, in, out_dim](const Tensor& g, const std::vector<NodePtr>& p) {
                       if (wants(p[0])) kernels::gemm_nt(be(), m, in, out_dim, g.ptr(), p[1]->value.ptr(), p[0]->grad_buffer().ptr());
                       if (wants(p[1])) kernels::gemm_tn(be(), in, out_dim, m, p[0]->value.ptr(), g.ptr(), p[1]->grad_buffer().ptr());
                       if (wants(p[2])) {
                         auto& gb = p[2]->grad_buffer();
                         for (std::size_t r = 0; r < m; ++r) {
                           for (std::size_t c = 0; c < out_dim; ++c) gb[c] += g[r * out_dim + c];
                         }
                       }
                     });
}

Var add(const Var& a, const Var& b) {
  require(a.value().size() == b.value().size(), "add", shapes(a, b));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, "add", [](const Tensor& g, const std::vector<NodePtr>& p) {
    if (wants(p[0])) p[0]->accumulate(g);
    if (wants(p[1])) p[1]->accumulate(g);
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.value().size() == b.value().size(), "sub", shapes(a, b));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, "sub", [](const Tensor& g, const std::vector<NodePtr>& p) {
    if (wants(p[0])) p[0]->accumulate(g);
    if (wants(p[1])) {
      auto& gb = p[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  const auto m = a.rows(), n = a.cols();
  require(row.value().size() == n, "add_row", shapes(a, row));
  Tensor out = a.value();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += row.value()[c];
  }
  return make_result(std::move(out), {a, row}, "add_row", [m, n](const Tensor& g, const std::vector<NodePtr>& p) {
    if (wants(p[0])) p[0]->accumulate(g);
    if (wants(p[1])) {
      auto& gb = p[1]->grad_buffer();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
      }
    }
  });
}

Var broadcast_rows(const Var& row, std::size_t rows) {
  const auto n = row.value().size();
  Tensor out = mat(rows, n);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(row.value().ptr(), n, out.ptr() + r * n);
  return make_result(std::move(out), {row}, "broadcast_rows", [rows, n](const Tensor& g, const std::vector<NodePtr>& p) {
    auto& gb = p[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

Var scale(const Var& a, Real s) {
  Tensor out = a.value();
  for (auto& x : out.data()) x *= s;
  return make_result(std::move(out), {a}, "scale", [s](const Tensor& g, const std::vector<NodePtr>& p) {
    auto& ga = p[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var concat_cols(const Var& a, const Var& b) {
  const auto m = a.rows(), ca = a.cols(), cb = b.cols();
  require(b.rows() == m, "concat_cols", shapes(a, b));
  Tensor out = mat(m, ca + cb);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(a.value().ptr() + r * ca, ca, out.ptr() + r * (ca + cb));
    std::copy_n(b.value().ptr() + r * cb, cb, out.ptr() + r * (ca + cb) + ca);
  }
  return make_result(std::move(out), {a, b}, "concat_cols", [m, ca, cb](const Tensor& g, const std::vector<NodePtr>& p) {
    for (std::size_t r = 0; r < m; ++r) {
      if (wants(p[0])) {
        auto& ga = p[0]->grad_buffer();
        for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * (ca + cb) + c];
      }
      if (wants(p[1])) {
        auto& gb = p[1]->grad_buffer();
        for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * (ca + cb) + ca + c];
      }
    }
  });
}

Var row_softmax(const Var& a) {
  const auto m = a.rows(), n = a.cols();
  Tensor out = mat(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    const Real* x = a.value().ptr() + r * n;
    Real* y = out.ptr() + r * n;
    const Real mx = *std::max_element(x, x + n);
    Real s = 0;
    for (std::size_t c = 0; c < n; ++c) s += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < n; ++c) y[c] /= s;
  }
  Tensor saved = out;
  return make_result(std::move(out), {a}, "row_softmax",
                     [m, n, y = std::move(saved)](const Tensor& g, const std::vector<NodePtr>& p) {
                       auto& ga = p[0]->grad_buffer();
                       for (std::size_t r = 0; r < m; ++r) {
                         Real dot = 0;
                         for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
                         for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
                       }
                     });
}

Var gelu(const Var& a) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  return make_result(std::move(out), {a}, "gelu", [](const Tensor& g, const std::vector<NodePtr>& p) {
    const auto& x = p[0]->value;
    auto& ga = p[0]->grad_buffer();
    constexpr Real inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
      const Real pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
}

Var dropout(const Var& a, Real p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  const Real keep_scale = 1.0 / (1.0 - p);
  Tensor mask(a.shape());
  std::bernoulli_distribution keep(1.0 - p);
  for (auto& m : mask.data()) m = keep(rng) ? keep_scale : 0.0;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_result(std::move(out), {a}, "dropout", [mask = std::move(mask)](const Tensor& g, const std::vector<NodePtr>& p) {
    auto& ga = p[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  const auto m = x.rows(), n = x.cols();
  require(gamma.value().size() == n && beta.value().size() == n, "layer_norm", shapes(x, gamma));
  Tensor out = mat(m, n), xhat = mat(m, n);
  std::vector<Real> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    const Real* xr = x.value().ptr() + r * n;
    Real mean = 0, var = 0;
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= static_cast<Real>(n);
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<Real>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (xr[c] - mean) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gamma.value()[c] + beta.value()[c];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, "layer_norm",
                     [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& g, const std::vector<NodePtr>& p) {
                       const auto& gam = p[1]->value;
                       if (wants(p[1]) || wants(p[2])) {
                         for (std::size_t r = 0; r < m; ++r) {
                           for (std::size_t c = 0; c < n; ++c) {
                             if (wants(p[1])) p[1]->grad_buffer()[c] += g[r * n + c] * xhat[r * n + c];
                             if (wants(p[2])) p[2]->grad_buffer()[c] += g[r * n + c];
                           }
                         }
                       }
                       if (!wants(p[0])) return;
                       auto& gx = p[0]->grad_buffer();
                       for (std::size_t r = 0; r < m; ++r) {
                         Real sum_g = 0, sum_gx = 0;
                         for (std::size_t c = 0; c < n; ++c) {
                           const Real gh = g[r * n + c] * gam[c];
                           sum_g += gh;
                           sum_gx += gh * xhat[r * n + c];
                         }
                         for (std::size_t c = 0; c < n; ++c) {
                           const Real gh = g[r * n + c] * gam[c];
                           gx[r * n + c] += inv_std[r] / static_cast<Real>(n) *
                                            (static_cast<Real>(n) * gh - sum_g - xhat[r * n + c] * sum_gx);
                         }
                       }
                     });
}

Var mean_rows(const Var& a) {
  const std::vector<std::size_t> offsets{0, a.rows()};
  return segment_mean(a, offsets);
}

Var segment_mean(const Var& a, std::span<const std::size_t> offsets) {
  const auto n = a.cols();
  require(!offsets.empty() && offsets.back() == a.rows(), "segment_mean", "offsets do not cover " + to_string(a.shape()));
  const std::size_t segs = offsets.size() - 1;
  Tensor out = mat(segs, n);
  for (std::size_t s = 0; s < segs; ++s) {
    const auto len = offsets[s + 1] - offsets[s];
    require(len > 0, "segment_mean", "empty segment");
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      for (std::size_t c = 0; c < n; ++c) out[s * n + c] += a.value()[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[s * n + c] /= static_cast<Real>(len);
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return make_result(std::move(out), {a}, "segment_mean", [n, off = std::move(off)](const Tensor& g, const std::vector<NodePtr>& p) {
    auto& ga = p[0]->grad_buffer();
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      const Real inv = 1.0 / static_cast<Real>(off[s + 1] - off[s]);
      for (std::size_t r = off[s]; r < off[s + 1]; ++r) {
        for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[s * n + c] * inv;
      }
    }
  });
}

Var sum(const Var& a) {
  Real s = 0;
  for (auto x : a.value().data()) s += x;
  return make_result(Tensor::scalar(s), {a}, "sum", [](const Tensor& g, const std::vector<NodePtr>& p) {
    auto& ga = p[0]->grad_buffer();
    for (auto& x : ga.data()) x += g[0];
  });
}

Var l2_sq(const Var& a) {
  Real s = 0;
  for (auto x : a.value().data()) s += x * x;
  return make_result(Tensor::scalar(s), {a}, "l2_sq", [](const Tensor& g, const std::vector<NodePtr>& p) {
    auto& ga = p[0]->grad_buffer();
    const auto& x = p[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * x[i] * g[0];
  });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
  const auto m = logits.rows(), n = logits.cols();
  require(targets.size() == m, "cross_entropy", "target count " + std::to_string(targets.size()) + " vs rows " + std::to_string(m));
  require(m > 0, "cross_entropy", "no rows");
  Tensor prob = mat(m, n);
  Real loss = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] >= n) throw ShapeError("cross_entropy: target class out of range");
    const Real* x = logits.value().ptr() + r * n;
    const Real mx = *std::max_element(x, x + n);
    Real s = 0;
    for (std::size_t c = 0; c < n; ++c) s += (prob[r * n + c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < n; ++c) prob[r * n + c] /= s;
    loss += -(x[targets[r]] - mx - std::log(s));
  }
  loss /= static_cast<Real>(m);
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return make_result(Tensor::scalar(loss), {logits}, "cross_entropy",
                     [m, n, prob = std::move(prob), t = std::move(t)](const Tensor& g, const std::vector<NodePtr>& p) {
                       auto& gl = p[0]->grad_buffer();
                       const Real s = g[0] / static_cast<Real>(m);
                       for (std::size_t r = 0; r < m; ++r) {
                         for (std::size_t c = 0; c < n; ++c) {
                           gl[r * n + c] += s * (prob[r * n + c] - (c == t[r] ? 1.0 : 0.0));
                         }
                       }
                     });
}

Var gather_rows(const Var& a, std::span<const std::size_t> index) {
  const auto n = a.cols();
  Tensor out = mat(index.size(), n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(a.value().ptr() + index[i] * n, n, out.ptr() + i * n);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result(std::move(out), {a}, "gather_rows", [n, idx = std::move(idx)](const Tensor& g, const std::vector<NodePtr>& p) {
    auto& ga = p[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < n; ++c) ga[idx[i] * n + c] += g[i * n + c];
    }
  });
}

Var scatter_rows(const Var& base, const Var& src, std::span<const std::size_t> dst) {
  const auto n = base.cols();
  require(src.cols() == n && src.rows() == dst.size(), "scatter_rows", shapes(base, src));
  Tensor out = base.value();
  std::vector<char> overwritten(base.rows(), 0);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i] >= base.rows()) throw ShapeError("scatter_rows: destination row out of range");
    if (overwritten[dst[i]]) throw ShapeError("scatter_rows: destination row repeated");
    overwritten[dst[i]] = 1;
    std::copy_n(src.value().ptr() + i * n, n, out.ptr() + dst[i] * n);
  }
  std::vector<std::size_t> d(dst.begin(), dst.end());
  return make_result(std::move(out), {base, src}, "scatter_rows",
                     [n, d = std::move(d), overwritten = std::move(overwritten)](const Tensor& g, const std::vector<NodePtr>& p) {
                       if (wants(p[0])) {
                         auto& gb = p[0]->grad_buffer();
                         for (std::size_t r = 0; r < overwritten.size(); ++r) {
                           if (overwritten[r]) continue;
                           for (std::size_t c = 0; c < n; ++c) gb[r * n + c] += g[r * n + c];
                         }
                       }
                       if (wants(p[1])) {
                         auto& gs = p[1]->grad_buffer();
                         for (std::size_t i = 0; i < d.size(); ++i) {
                           for (std::size_t c = 0; c < n; ++c) gs[i * n + c] += g[d[i] * n + c];
                         }
                       }
                     });
}

Var segment_attention(const Var& q, const Var& k, const Var& v, std::span<const std::size_t> offsets,
                      std::size_t heads) {
  const auto rows = q.rows(), d = q.cols();
  require(k.rows() == rows && v.rows() == rows && k.cols() == d && v.cols() == d, "segment_attention", shapes(q, v));
  require(heads > 0 && d % heads == 0, "segment_attention", "width " + std::to_string(d) + " not divisible by heads");
  require(!offsets.empty() && offsets.front() == 0 && offsets.back() == rows, "segment_attention", "offsets do not cover rows");
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  const auto poff = kernels::attention_prob_offsets(off, heads);
  Tensor probs(Shape{poff.back()});
  Tensor out = mat(rows, d);
  kernels::AttentionShape shape{d, heads, off};
  kernels::attention_forward(be(), shape, q.value().ptr(), k.value().ptr(), v.value().ptr(), out.ptr(), probs.ptr());
  return make_result(std::move(out), {q, k, v}, "segment_attention",
                     [d, heads, off = std::move(off), probs = std::move(probs)](const Tensor& g, const std::vector<NodePtr>& p) {
                       kernels::AttentionShape s{d, heads, off};
                       Tensor dq(p[0]->value.shape()), dk(p[1]->value.shape()), dv(p[2]->value.shape());
                       kernels::attention_backward(be(), s, p[0]->value.ptr(), p[1]->value.ptr(), p[2]->value.ptr(),
                                                   probs.ptr(), g.ptr(), dq.ptr(), dk.ptr(), dv.ptr());
                       if (wants(p[0])) p[0]->accumulate(dq);
                       if (wants(p[1])) p[1]->accumulate(dk);
                       if (wants(p[2])) p[2]->accumulate(dv);
                     });
}

Var weighted_sq_error(const Var& a, const Tensor& target, std::span<const Real> row_weights) {
  const auto m = a.rows(), n = a.cols();
  require(target.size() == a.value().size(), "weighted_sq_error", to_string(a.shape()) + " vs " + to_string(target.shape()));
  require(row_weights.size() == m, "weighted_sq_error", "one weight per row required");
  Real loss = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (row_weights[r] == 0.0) continue;
    Real s = 0;
    for (std::size_t c = 0; c < n; ++c) {
      const Real diff = a.value()[r * n + c] - target[r * n + c];
      s += diff * diff;
    }
    loss += row_weights[r] * s;
  }
  std::vector<Real> w(row_weights.begin(), row_weights.end());
  return make_result(Tensor::scalar(loss), {a}, "weighted_sq_error",
                     [m, n, target, w = std::move(w)](const Tensor& g, const std::vector<NodePtr>& p) {
                       auto& ga = p[0]->grad_buffer();
                       const auto& x = p[0]->value;
                       for (std::size_t r = 0; r < m; ++r) {
                         if (w[r] == 0.0) continue;
                         for (std::size_t c = 0; c < n; ++c) {
                           ga[r * n + c] += 2.0 * w[r] * g[0] * (x[r * n + c] - target[r * n + c]);
                         }
                       }
                     });
}

}  // namespace g2pm::nn
