#include "febench/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_set>

namespace febench {

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::conv1d_valid: return "conv1d_valid";
    case OpKind::max_over_time: return "max_over_time";
    case OpKind::relu: return "relu";
    case OpKind::gelu: return "gelu";
    case OpKind::tanh: return "tanh";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::scaled_dot_attention: return "scaled_dot_attention";
    case OpKind::concat: return "concat";
    case OpKind::linear: return "linear";
    case OpKind::sum: return "sum";
    case OpKind::reshape: return "reshape";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::sigmoid_bce: return "sigmoid_bce";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& what) {
  throw ShapeError(std::string(to_string(kind)) + ": " + what);
}

void expect_inputs(OpKind kind, std::size_t got, std::size_t lo, std::size_t hi) {
  if (got < lo || got > hi) {
    shape_fail(kind, "expected " + std::to_string(lo) + (lo == hi ? "" : ".." + std::to_string(hi)) +
                         " inputs, got " + std::to_string(got));
  }
}

// Rows/cols of a rank-1 or rank-2 tensor viewed as a matrix (rank-1 is one row).
template <typename T>
std::pair<std::size_t, std::size_t> as_matrix(OpKind kind, const Tensor<T>& t, const char* name) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  shape_fail(kind, std::string(name) + " must be rank 1 or 2, got " + shape_str(t.shape()));
}

// C[m x n] += A[m x k] * B[k x n]; A rows start every `lda` elements.
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, std::size_t lda, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// dA[m x k] (row stride lda) += G[m x n] * B[k x n]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* g, const T* b, T* da, std::size_t lda) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    T* arow = da + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      arow[p] += acc;
    }
  }
}

// dB[k x n] += A[m x k]^T * G[m x n]; A rows start every `lda` elements.
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, std::size_t lda, const T* g, T* db) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * lda;
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      T* brow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
    }
  }
}

template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

// Buffer kept alive by a backward rule; counted as activations while it lives.
template <typename T>
struct Saved {
  std::vector<T> values;
  MemoryLedger* ledger = nullptr;

  Saved(std::size_t n, MemoryLedger* l) : values(n, T(0)), ledger(l) {
    if (ledger) ledger->record_alloc(MemoryCategory::activations, values.size() * sizeof(T));
  }
  Saved(const Saved&) = delete;
  Saved& operator=(const Saved&) = delete;
  ~Saved() {
    if (ledger) ledger->record_free(MemoryCategory::activations, values.size() * sizeof(T));
  }
};

template <typename T>
T* grad_ptr(TensorImpl<T>* impl) {
  return impl->requires_grad ? impl->ensure_grad().data() : nullptr;
}

template <typename T>
struct Built {
  Shape shape;
  std::vector<T> data;
  // Receives the output's impl; called only when the output has a gradient.
  std::function<void(TensorImpl<T>*)> backward;
};

template <typename T>
using Inputs = std::span<const Tensor<T>>;

template <typename T>
Built<T> build_matmul(Inputs<T> in, MemoryLedger*) {
  constexpr auto kind = OpKind::matmul;
  expect_inputs(kind, in.size(), 2, 2);
  const auto& a = in[0];
  const auto& b = in[1];
  if (a.rank() != 2 || b.rank() != 2) {
    shape_fail(kind, "operands must be rank 2, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    shape_fail(kind, "inner dimensions differ: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  Built<T> out{{m, n}, std::vector<T>(m * n, T(0)), {}};
  gemm_nn(m, k, n, a.data().data(), k, b.data().data(), out.data.data());
  auto* ai = a.impl();
  auto* bi = b.impl();
  out.backward = [=](TensorImpl<T>* o) {
    const T* g = o->grad.data();
    if (T* da = grad_ptr(ai)) gemm_nt(m, k, n, g, bi->data.data(), da, k);
    if (T* db = grad_ptr(bi)) gemm_tn(m, k, n, ai->data.data(), k, g, db);
  };
  return out;
}

template <typename T>
Built<T> build_linear(Inputs<T> in, MemoryLedger*) {
  constexpr auto kind = OpKind::linear;
  expect_inputs(kind, in.size(), 2, 3);
  const auto& x = in[0];
  const auto& w = in[1];
  auto [m, k] = as_matrix(kind, x, "input");
  if (w.rank() != 2 || w.dim(0) != k) {
    shape_fail(kind, "weight " + shape_str(w.shape()) + " does not accept input " + shape_str(x.shape()));
  }
  const auto n = w.dim(1);
  const bool has_bias = in.size() == 3;
  if (has_bias && (in[2].rank() != 1 || in[2].dim(0) != n)) {
    shape_fail(kind, "bias " + shape_str(in[2].shape()) + " does not match output width " + std::to_string(n));
  }
  Shape shape = x.rank() == 1 ? Shape{n} : Shape{m, n};
  Built<T> out{shape, std::vector<T>(m * n, T(0)), {}};
  if (has_bias) {
    auto bias = in[2].data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bias.begin(), bias.end(), out.data.begin() + i * n);
  }
  gemm_nn(m, k, n, x.data().data(), k, w.data().data(), out.data.data());
  auto* xi = x.impl();
  auto* wi = w.impl();
  auto* bi = has_bias ? in[2].impl() : nullptr;
  out.backward = [=](TensorImpl<T>* o) {
    const T* g = o->grad.data();
    if (T* dx = grad_ptr(xi)) gemm_nt(m, k, n, g, wi->data.data(), dx, k);
    if (T* dw = grad_ptr(wi)) gemm_tn(m, k, n, xi->data.data(), k, g, dw);
    if (bi) {
      if (T* db = grad_ptr(bi)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
      }
    }
  };
  return out;
}

template <typename T>
Built<T> build_add(Inputs<T> in, MemoryLedger*) {
  constexpr auto kind = OpKind::add;
  expect_inputs(kind, in.size(), 2, 2);
  const auto& a = in[0];
  const auto& b = in[1];
  const bool same = a.shape() == b.shape();
  const bool row_broadcast = !same && b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0);
  if (!same && !row_broadcast) {
    shape_fail(kind, "cannot add " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto n = a.numel();
  const auto width = b.numel();
  Built<T> out{a.shape(), std::vector<T>(n), {}};
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out.data[i] = ad[i] + bd[i % width];
  auto* ai = a.impl();
  auto* bi = b.impl();
  out.backward = [=](TensorImpl<T>* o) {
    const T* g = o->grad.data();
    if (T* da = grad_ptr(ai))
      for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
    if (T* db = grad_ptr(bi))
      for (std::size_t i = 0; i < n; ++i) db[i % width] += g[i];
  };
  return out;
}

template <typename T>
Built<T> build_mul(Inputs<T> in, MemoryLedger*) {
  constexpr auto kind = OpKind::mul;
  expect_inputs(kind, in.size(), 2, 2);
  const auto& a = in[0];
  const auto& b = in[1];
  if (a.shape() != b.shape()) shape_fail(kind, "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto n = a.numel();
  Built<T> out{a.shape(), std::vector<T>(n), {}};
  for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data()[i] * b.data()[i];
  auto* ai = a.impl();
  auto* bi = b.impl();
  out.backward = [=](TensorImpl<T>* o) {
    const T* g = o->grad.data();
    if (T* da = grad_ptr(ai))
      for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * bi->data[i];
    if (T* db = grad_ptr(bi))
      for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * ai->data[i];
  };
  return out;
}

// x [n x H], w [k x H x f], optional bias [f] -> [(n - k + 1) x f]
template <typename T>
Built<T> build_conv1d(Inputs<T> in, MemoryLedger*) {
  constexpr auto kind = OpKind::conv1d_valid;
  expect_inputs(kind, in.size(), 2, 3);
  const auto& x = in[0];
  const auto& w = in[1];
  if (x.rank() != 2) shape_fail(kind, "input must be [positions x channels], got " + shape_str(x.shape()));
  if (w.rank() != 3) shape_fail(kind, "kernel must be [width x channels x filters], got " + shape_str(w.shape()));
  const auto n = x.dim(0), h = x.dim(1);
  const auto k = w.dim(0), f = w.dim(2);
  if (w.dim(1) != h) {
    shape_fail(kind, "kernel channels " + std::to_string(w.dim(1)) + " differ from input channels " + std::to_string(h));
  }
  if (k > n) {
    throw KernelTooLongError("conv1d_valid: kernel width " + std::to_string(k) + " exceeds sequence length " +
                             std::to_string(n));
  }
  const bool has_bias = in.size() == 3;
  if (has_bias && (in[2].rank() != 1 || in[2].dim(0) != f)) {
    shape_fail(kind, "bias " + shape_str(in[2].shape()) + " does not match filter count " + std::to_string(f));
  }
  const auto steps = n - k + 1;
  const auto window = k * h;
  Built<T> out{{steps, f}, std::vector<T>(steps * f, T(0)), {}};
  if (has_bias) {
    auto bias = in[2].data();
    for (std::size_t t = 0; t < steps; ++t) std::copy(bias.begin(), bias.end(), out.data.begin() + t * f);
  }
  // Window t is the contiguous slice x[t*H, t*H + k*H).
  gemm_nn(steps, window, f, x.data().data(), h, w.data().data(), out.data.data());
  auto* xi = x.impl();
  auto* wi = w.impl();
  auto* bi = has_bias ? in[2].impl() : nullptr;
  out.backward = [=](TensorImpl<T>* o) {
    const T* g = o->grad.data();
    if (T* dx = grad_ptr(xi)) gemm_nt(steps, window, f, g, wi->data.data(), dx, h);
    if (T* dw = grad_ptr(wi)) gemm_tn(steps, window, f, xi->data.data(), h, g, dw);
    if (bi) {
      if (T* db = grad_ptr(bi)) {
        for (std::size_t t = 0; t < steps; ++t)
          for (std::size_t j = 0; j < f; ++j) db[j] += g[t * f + j];
      }
    }
  };
  return out;
}

template <typename T>
Built<T> build_max_over_time(Inputs<T> in, const OpAttrs& attrs, MemoryLedger*) {
  constexpr auto kind = OpKind::max_over_time;
  expect_inputs(kind, in.size(), 1, 1);
  const auto& x = in[0];
  if (x.rank() != 2) shape_fail(kind, "input must be [positions x channels], got " + shape_str(x.shape()));
  const auto n = x.dim(0), f = x.dim(1);
  const auto limit = attrs.limit.value_or(n);
  if (limit == 0 || limit > n) {
    shape_fail(kind, "window count " + std::to_string(limit) + " outside [1, " + std::to_string(n) + "]");
  }
  Built<T> out{{f}, std::vector<T>(f), {}};
  std::vector<std::size_t> arg(f, 0);
  auto xd = x.data();
  for (std::size_t j = 0; j < f; ++j) out.data[j] = xd[j];
  for (std::size_t t = 1; t < limit; ++t) {
    for (std::size_t j = 0; j < f; ++j) {
      if (xd[t * f + j] > out.data[j]) {
        out.data[j] = xd[t * f + j];
        arg[j] = t;
      }
    }
  }
  auto* xi = x.impl();
  out.backward = [=, arg = std::move(arg)](TensorImpl<T>* o) {
    if (T* dx = grad_ptr(xi))
      for (std::size_t j = 0; j < f; ++j) dx[arg[j] * f + j] += o->grad[j];
  };
  return out;
}

template <typename T>
Built<T> build_unary(OpKind kind, Inputs<T> in, MemoryLedger*) {
  expect_inputs(kind, in.size(), 1, 1);
  const auto& x = in[0];
  const auto n = x.numel();
  Built<T> out{x.shape(), std::vector<T>(n), {}};
  auto xd = x.data();
  constexpr T c = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T a = T(0.044715);
  switch (kind) {
    case OpKind::relu:
      for (std::size_t i = 0; i < n; ++i) out.data[i] = xd[i] > T(0) ? xd[i] : T(0);
      break;
    case OpKind::tanh:
      for (std::size_t i = 0; i < n; ++i) out.data[i] = std::tanh(xd[i]);
      break;
    case OpKind::gelu:
      for (std::size_t i = 0; i < n; ++i) {
        const T v = xd[i];
        out.data[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
      }
      break;
    default: shape_fail(kind, "not a unary kind");
  }
  auto* xi = x.impl();
  out.backward = [=](TensorImpl<T>* o) {
    T* dx = grad_ptr(xi);
    if (!dx) return;
    const T* g = o->grad.data();
    const T* xv = xi->data.data();
    const T* y = o->data.data();
    switch (kind) {
      case OpKind::relu:
        // derivative at exactly 0 is taken as 0
        for (std::size_t i = 0; i < n; ++i) dx[i] += xv[i] > T(0) ? g[i] : T(0);
        break;
      case OpKind::tanh:
        for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * (T(1) - y[i] * y[i]);
        break;
      case OpKind::gelu:
        for (std::size_t i = 0; i < n; ++i) {
          const T v = xv[i];
          const T th = std::tanh(c * (v + a * v * v * v));
          const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * a * v * v);
          dx[i] += g[i] * d;
        }
        break;
      default: break;
    }
  };
  return out;
}

template <typename T>
Built<T> build_layer_norm(Inputs<T> in, MemoryLedger* ledger) {
  constexpr auto kind = OpKind::layer_norm;
  expect_inputs(kind, in.size(), 3, 3);
  const auto& x = in[0];
  const auto& gamma = in[1];
  const auto& beta = in[2];
  auto [rows, h] = as_matrix(kind, x, "input");
  if (gamma.rank() != 1 || gamma.dim(0) != h || beta.rank() != 1 || beta.dim(0) != h) {
    shape_fail(kind, "scale " + shape_str(gamma.shape()) + " / offset " + shape_str(beta.shape()) +
                         " do not match width " + std::to_string(h));
  }
  Built<T> out{x.shape(), std::vector<T>(rows * h), {}};
  auto xhat = std::make_shared<Saved<T>>(rows * h, ledger);
  auto rstd = std::make_shared<Saved<T>>(rows, ledger);
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * h;
    T mean = T(0);
    for (std::size_t j = 0; j < h; ++j) mean += row[j];
    mean /= static_cast<T>(h);
    T var = T(0);
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(h);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd->values[r] = inv;
    for (std::size_t j = 0; j < h; ++j) {
      const T z = (row[j] - mean) * inv;
      xhat->values[r * h + j] = z;
      out.data[r * h + j] = gd[j] * z + bd[j];
    }
  }
  auto* xi = x.impl();
  auto* gi = gamma.impl();
  auto* bi = beta.impl();
  out.backward = [=](TensorImpl<T>* o) {
    const T* g = o->grad.data();
    const T* z = xhat->values.data();
    if (T* dg = grad_ptr(gi))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < h; ++j) dg[j] += g[r * h + j] * z[r * h + j];
    if (T* db = grad_ptr(bi))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < h; ++j) db[j] += g[r * h + j];
    T* dx = grad_ptr(xi);
    if (!dx) return;
    const T* gam = gi->data.data();
    std::vector<T> dz(h);
    for (std::size_t r = 0; r < rows; ++r) {
      T m1 = T(0), m2 = T(0);
      for (std::size_t j = 0; j < h; ++j) {
        dz[j] = g[r * h + j] * gam[j];
        m1 += dz[j];
        m2 += dz[j] * z[r * h + j];
      }
      m1 /= static_cast<T>(h);
      m2 /= static_cast<T>(h);
      const T inv = rstd->values[r];
      for (std::size_t j = 0; j < h; ++j) dx[r * h + j] += inv * (dz[j] - m1 - z[r * h + j] * m2);
    }
  };
  return out;
}

template <typename T>
Built<T> build_embedding(Inputs<T> in, const OpAttrs& attrs, MemoryLedger*) {
  constexpr auto kind = OpKind::embedding_lookup;
  expect_inputs(kind, in.size(), 1, 1);
  const auto& table = in[0];
  if (table.rank() != 2) shape_fail(kind, "table must be [rows x width], got " + shape_str(table.shape()));
  if (attrs.ids.empty()) shape_fail(kind, "no ids");
  const auto v = table.dim(0), h = table.dim(1);
  const auto n = attrs.ids.size();
  Built<T> out{{n, h}, std::vector<T>(n * h), {}};
  auto td = table.data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = attrs.ids[i];
    if (id >= v) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " at position " + std::to_string(i) +
                              " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(td.begin() + id * h, h, out.data.begin() + i * h);
  }
  auto* ti = table.impl();
  out.backward = [=, ids = attrs.ids](TensorImpl<T>* o) {
    T* dt = grad_ptr(ti);
    if (!dt) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < h; ++j) dt[ids[i] * h + j] += o->grad[i * h + j];
  };
  return out;
}

// q, k, v [n x H]; each of `heads` slices of width H / heads attends over the
// first `limit` key positions only.
template <typename T>
Built<T> build_attention(Inputs<T> in, const OpAttrs& attrs, MemoryLedger* ledger) {
  constexpr auto kind = OpKind::scaled_dot_attention;
  expect_inputs(kind, in.size(), 3, 3);
  const auto& q = in[0];
  const auto& k = in[1];
  const auto& v = in[2];
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    shape_fail(kind, "query/key/value shapes must be equal rank-2, got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const auto n = q.dim(0), h = q.dim(1);
  const auto heads = attrs.heads;
  if (heads == 0 || h % heads != 0) {
    shape_fail(kind, "width " + std::to_string(h) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const auto keys = attrs.limit.value_or(n);
  if (keys == 0 || keys > n) {
    shape_fail(kind, "valid key count " + std::to_string(keys) + " outside [1, " + std::to_string(n) + "]");
  }
  const auto dh = h / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<Saved<T>>(heads * n * keys, ledger);
  Built<T> out{{n, h}, std::vector<T>(n * h, T(0)), {}};
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const auto off = hd * dh;
    for (std::size_t i = 0; i < n; ++i) {
      T* p = probs->values.data() + (hd * n + i) * keys;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < keys; ++j) {
        T s = T(0);
        for (std::size_t d = 0; d < dh; ++d) s += qd[i * h + off + d] * kd[j * h + off + d];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      T z = T(0);
      for (std::size_t j = 0; j < keys; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      T* orow = out.data.data() + i * h + off;
      for (std::size_t j = 0; j < keys; ++j) {
        p[j] /= z;
        for (std::size_t d = 0; d < dh; ++d) orow[d] += p[j] * vd[j * h + off + d];
      }
    }
  }
  auto* qi = q.impl();
  auto* ki = k.impl();
  auto* vi = v.impl();
  out.backward = [=](TensorImpl<T>* o) {
    T* dq = grad_ptr(qi);
    T* dk = grad_ptr(ki);
    T* dv = grad_ptr(vi);
    const T* g = o->grad.data();
    const T* qv = qi->data.data();
    const T* kv = ki->data.data();
    const T* vv = vi->data.data();
    std::vector<T> ds(keys);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const auto off = hd * dh;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = probs->values.data() + (hd * n + i) * keys;
        const T* grow = g + i * h + off;
        T dot = T(0);
        for (std::size_t j = 0; j < keys; ++j) {
          T dp = T(0);
          for (std::size_t d = 0; d < dh; ++d) dp += grow[d] * vv[j * h + off + d];
          ds[j] = dp;
          dot += p[j] * dp;
          if (dv)
            for (std::size_t d = 0; d < dh; ++d) dv[j * h + off + d] += p[j] * grow[d];
        }
        for (std::size_t j = 0; j < keys; ++j) {
          const T s = p[j] * (ds[j] - dot) * scale;
          if (dq)
            for (std::size_t d = 0; d < dh; ++d) dq[i * h + off + d] += s * kv[j * h + off + d];
          if (dk)
            for (std::size_t d = 0; d < dh; ++d) dk[j * h + off + d] += s * qv[i * h + off + d];
        }
      }
    }
  };
  return out;
}

template <typename T>
Built<T> build_concat(Inputs<T> in, MemoryLedger*) {
  constexpr auto kind = OpKind::concat;
  if (in.empty()) shape_fail(kind, "no parts");
  const auto rank = in[0].rank();
  if (rank != 1 && rank != 2) shape_fail(kind, "parts must be rank 1 or 2, got " + shape_str(in[0].shape()));
  std::size_t lead = 0;
  for (const auto& p : in) {
    if (p.rank() != rank || (rank == 2 && p.dim(1) != in[0].dim(1))) {
      shape_fail(kind, "part " + shape_str(p.shape()) + " incompatible with " + shape_str(in[0].shape()));
    }
    lead += p.dim(0);
  }
  Shape shape = rank == 1 ? Shape{lead} : Shape{lead, in[0].dim(1)};
  Built<T> out{shape, {}, {}};
  out.data.reserve(numel(shape));
  std::vector<TensorImpl<T>*> parts;
  for (const auto& p : in) {
    out.data.insert(out.data.end(), p.data().begin(), p.data().end());
    parts.push_back(p.impl());
  }
  out.backward = [parts = std::move(parts)](TensorImpl<T>* o) {
    std::size_t offset = 0;
    for (auto* p : parts) {
      const auto len = p->data.size();
      if (T* dp = grad_ptr(p))
        for (std::size_t i = 0; i < len; ++i) dp[i] += o->grad[offset + i];
      offset += len;
    }
  };
  return out;
}

template <typename T>
Built<T> build_sum(Inputs<T> in, MemoryLedger*) {
  expect_inputs(OpKind::sum, in.size(), 1, 1);
  const auto& x = in[0];
  T s = T(0);
  for (T v : x.data()) s += v;
  auto* xi = x.impl();
  return {{}, {s}, [xi](TensorImpl<T>* o) {
            if (T* dx = grad_ptr(xi))
              for (std::size_t i = 0; i < xi->data.size(); ++i) dx[i] += o->grad[0];
          }};
}

template <typename T>
Built<T> build_reshape(Inputs<T> in, const OpAttrs& attrs, MemoryLedger*) {
  expect_inputs(OpKind::reshape, in.size(), 1, 1);
  const auto& x = in[0];
  if (numel(attrs.shape) != x.numel()) {
    shape_fail(OpKind::reshape, "cannot view " + shape_str(x.shape()) + " as " + shape_str(attrs.shape));
  }
  auto* xi = x.impl();
  return {attrs.shape, std::vector<T>(x.data().begin(), x.data().end()), [xi](TensorImpl<T>* o) {
            if (T* dx = grad_ptr(xi))
              for (std::size_t i = 0; i < xi->data.size(); ++i) dx[i] += o->grad[i];
          }};
}

// Mean over rows of -log softmax(row)[target], in log-space.
template <typename T>
Built<T> build_softmax_ce(Inputs<T> in, const OpAttrs& attrs, MemoryLedger* ledger) {
  constexpr auto kind = OpKind::softmax_cross_entropy;
  expect_inputs(kind, in.size(), 1, 1);
  const auto& z = in[0];
  auto [rows, classes] = as_matrix(kind, z, "logits");
  if (attrs.ids.size() != rows) {
    shape_fail(kind, std::to_string(attrs.ids.size()) + " targets for " + std::to_string(rows) + " rows");
  }
  auto probs = std::make_shared<Saved<T>>(rows * classes, ledger);
  T total = T(0);
  auto zd = z.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = attrs.ids[r];
    if (t >= classes) {
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(t) + " not below class count " +
                              std::to_string(classes));
    }
    const T* row = zd.data() + r * classes;
    const T mx = *std::max_element(row, row + classes);
    T s = T(0);
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - mx);
    const T lse = mx + std::log(s);
    total += lse - row[t];
    for (std::size_t c = 0; c < classes; ++c) probs->values[r * classes + c] = std::exp(row[c] - lse);
  }
  const T inv_rows = T(1) / static_cast<T>(rows);
  auto* zi = z.impl();
  return {{}, {total * inv_rows}, [=, targets = attrs.ids](TensorImpl<T>* o) {
            T* dz = grad_ptr(zi);
            if (!dz) return;
            const T g = o->grad[0] * inv_rows;
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < classes; ++c) {
                const T onehot = c == targets[r] ? T(1) : T(0);
                dz[r * classes + c] += g * (probs->values[r * classes + c] - onehot);
              }
          }};
}

// Mean over all entries of BCE(sigmoid(z), y) = max(z,0) - z*y + log(1 + exp(-|z|)).
template <typename T>
Built<T> build_sigmoid_bce(Inputs<T> in, const OpAttrs& attrs, MemoryLedger*) {
  constexpr auto kind = OpKind::sigmoid_bce;
  expect_inputs(kind, in.size(), 1, 1);
  const auto& z = in[0];
  as_matrix(kind, z, "logits");
  const auto n = z.numel();
  if (attrs.targets.size() != n) {
    shape_fail(kind, std::to_string(attrs.targets.size()) + " targets for logits " + shape_str(z.shape()));
  }
  T total = T(0);
  auto zd = z.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T v = zd[i];
    const T y = static_cast<T>(attrs.targets[i]);
    total += std::max(v, T(0)) - v * y + std::log1p(std::exp(-std::abs(v)));
  }
  const T inv_n = T(1) / static_cast<T>(n);
  auto* zi = z.impl();
  return {{}, {total * inv_n}, [=, targets = attrs.targets](TensorImpl<T>* o) {
            T* dz = grad_ptr(zi);
            if (!dz) return;
            const T g = o->grad[0] * inv_n;
            for (std::size_t i = 0; i < n; ++i) dz[i] += g * (sigmoid(zi->data[i]) - static_cast<T>(targets[i]));
          }};
}

}  // namespace

template <typename T>
Tensor<T> Tape<T>::apply(OpKind kind, std::span<const Tensor<T>> inputs, const OpAttrs& attrs) {
  for (const auto& t : inputs) {
    if (!t.defined()) throw std::invalid_argument(std::string(to_string(kind)) + ": undefined input tensor");
  }
  if (consumed_) {
    // A new forward pass begins.
    entries_.clear();
    consumed_ = false;
  }
  Built<T> built;
  switch (kind) {
    case OpKind::matmul: built = build_matmul(inputs, ledger_); break;
    case OpKind::add: built = build_add(inputs, ledger_); break;
    case OpKind::mul: built = build_mul(inputs, ledger_); break;
    case OpKind::conv1d_valid: built = build_conv1d(inputs, ledger_); break;
    case OpKind::max_over_time: built = build_max_over_time(inputs, attrs, ledger_); break;
    case OpKind::relu:
    case OpKind::gelu:
    case OpKind::tanh: built = build_unary(kind, inputs, ledger_); break;
    case OpKind::layer_norm: built = build_layer_norm(inputs, ledger_); break;
    case OpKind::embedding_lookup: built = build_embedding(inputs, attrs, ledger_); break;
    case OpKind::scaled_dot_attention: built = build_attention(inputs, attrs, ledger_); break;
    case OpKind::concat: built = build_concat(inputs, ledger_); break;
    case OpKind::linear: built = build_linear(inputs, ledger_); break;
    case OpKind::sum: built = build_sum(inputs, ledger_); break;
    case OpKind::reshape: built = build_reshape(inputs, attrs, ledger_); break;
    case OpKind::softmax_cross_entropy: built = build_softmax_ce(inputs, attrs, ledger_); break;
    case OpKind::sigmoid_bce: built = build_sigmoid_bce(inputs, attrs, ledger_); break;
  }
  const bool tracked = recording_ && std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
  auto out = Tensor<T>::from(std::move(built.shape), std::move(built.data), tracked);
  out.impl()->is_leaf = false;
  out.attach_ledger(ledger_, MemoryCategory::activations);
  if (tracked) {
    auto* oi = out.impl();
    entries_.push_back(Entry{kind, std::vector<Tensor<T>>(inputs.begin(), inputs.end()), out,
                             [oi, fn = std::move(built.backward)] {
                               if (!oi->grad.empty()) fn(oi);
                             }});
  }
  return out;
}

template <typename T>
GradientMap<T> Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw NonScalarError("backward: loss must be a scalar, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (consumed_) throw StaleRecordError("backward: record already traversed; run a new forward pass first");
  consumed_ = true;

  GradientMap<T> grads;
  if (!loss.requires_grad()) {
    entries_.clear();
    return grads;
  }
  loss.impl()->ensure_grad()[0] += T(1);

  std::unordered_set<TensorImpl<T>*> leaves;
  if (loss.is_leaf()) leaves.insert(loss.impl());
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward();
    it->output.impl()->release_grad();
    for (const auto& in : it->inputs) {
      if (in.is_leaf() && in.requires_grad() && in.has_grad()) leaves.insert(in.impl());
    }
  }
  for (auto* leaf : leaves) grads.emplace(leaf->id, std::span<const T>(leaf->grad));
  entries_.clear();
  return grads;
}

template <typename T>
std::vector<RecordEntry> Tape<T>::record() const {
  std::vector<RecordEntry> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) {
    RecordEntry r{e.kind, {}, e.output.id()};
    for (const auto& in : e.inputs) r.inputs.push_back(in.id());
    out.push_back(std::move(r));
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace febench
