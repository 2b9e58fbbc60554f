#include "sd/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>

#include "sd/rng.hpp"

namespace sd {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local int g_no_grad_depth = 0;
thread_local uint64_t g_mac_flops = 0;
std::atomic<uint64_t> g_tape_gen{1};

// C = alpha·op(A)·op(B) + beta·C, row-major. Single BLAS thread keeps the
// reduction order fixed, so results are bit-reproducible run to run.
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a,
          const double* b, double beta, double* c) {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}

int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

void check_2d(const Tensor& t, const char* op) {
  check_defined(t, op);
  if (t.ndim() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
}

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!grad_recording_enabled()) return false;
  for (const Tensor* t : inputs)
    if ((*t).p->requires_grad) return true;
  return false;
}

Tensor make_output(std::vector<int> shape) {
  Tensor t;
  t.p = std::make_shared<TensorData>();
  t.p->shape = std::move(shape);
  t.p->val.assign(static_cast<size_t>(numel_of(t.p->shape)), 0.0);
  return t;
}

void attach(Tensor& out, std::function<void()> fn) {
  out.p->requires_grad = true;
  Tape::active()->record(out.p, std::move(fn));
}

// true when the output carries gradient to propagate
bool has_out_grad(const std::shared_ptr<TensorData>& out) { return !out->grad.empty(); }

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ----

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t = make_output(std::move(shape));
  t.p->requires_grad = requires_grad;
  if (requires_grad) t.p->ensure_grad();
  return t;
}

Tensor Tensor::constant(std::vector<int> shape, double value) {
  Tensor t = make_output(std::move(shape));
  std::fill(t.p->val.begin(), t.p->val.end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("Tensor::from: " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  Tensor t;
  t.p = std::make_shared<TensorData>();
  t.p->shape = std::move(shape);
  t.p->val = std::move(values);
  t.p->requires_grad = requires_grad;
  if (requires_grad) t.p->ensure_grad();
  return t;
}

Tensor Tensor::fan_in_init(std::vector<int> shape, int fan_in, Rng& rng) {
  if (fan_in < 1) throw std::invalid_argument("fan_in_init: fan_in must be >= 1");
  Tensor t = make_output(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.p->val) v = rng.uniform(-bound, bound);
  t.p->requires_grad = true;
  t.p->ensure_grad();
  return t;
}

double Tensor::scalar() const {
  if (numel() != 1)
    throw std::invalid_argument("scalar(): tensor has shape " + shape_str(shape()));
  return p->val[0];
}

void Tensor::zero_grad() {
  p->ensure_grad();
  std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

// ---- Tape ----

Tape::Tape() : gen_(g_tape_gen.fetch_add(1)), prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

bool grad_recording_enabled() { return g_active_tape != nullptr && g_no_grad_depth == 0; }

void Tape::record(const std::shared_ptr<TensorData>& out, std::function<void()> fn) {
  out->node = static_cast<int64_t>(nodes_.size());
  out->tape_gen = gen_;
  nodes_.push_back(std::move(fn));
}

void Tape::backward(const Tensor& loss) {
  check_defined(loss, "backward");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (loss.p->tape_gen != gen_ || loss.p->node < 0)
    throw std::runtime_error("backward: loss is not on this tape");
  if (consumed_)
    throw std::runtime_error("backward: tape already consumed; call reset() before reuse");
  consumed_ = true;
  loss.p->ensure_grad();
  loss.p->grad[0] += 1.0;
  for (int64_t i = loss.p->node; i >= 0; --i) nodes_[static_cast<size_t>(i)]();
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
  gen_ = g_tape_gen.fetch_add(1);
}

NoGrad::NoGrad() { ++g_no_grad_depth; }
NoGrad::~NoGrad() { --g_no_grad_depth; }

uint64_t mac_flops() { return g_mac_flops; }
void reset_mac_flops() { g_mac_flops = 0; }

bool all_finite(const Tensor& t) {
  for (double v : t.p->val)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_output({m, n});
  gemm(false, false, m, n, k, 1.0, a.data(), b.data(), 0.0, out.data());
  g_mac_flops += 2ull * m * n * k;
  if (recording({&a, &b})) {
    auto pa = a.p, pb = b.p, po = out.p;
    attach(out, [pa, pb, po, m, n, k] {
      if (!has_out_grad(po)) return;
      if (pa->requires_grad) {
        pa->ensure_grad();  // dA += dC·Bᵀ
        gemm(false, true, m, k, n, 1.0, po->grad.data(), pb->val.data(), 1.0, pa->grad.data());
      }
      if (pb->requires_grad) {
        pb->ensure_grad();  // dB += Aᵀ·dC
        gemm(true, false, k, n, m, 1.0, pa->val.data(), po->grad.data(), 1.0, pb->grad.data());
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul_nt");
  check_2d(b, "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw std::invalid_argument("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()) + "ᵀ");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = make_output({m, n});
  gemm(false, true, m, n, k, 1.0, a.data(), b.data(), 0.0, out.data());
  g_mac_flops += 2ull * m * n * k;
  if (recording({&a, &b})) {
    auto pa = a.p, pb = b.p, po = out.p;
    attach(out, [pa, pb, po, m, n, k] {
      if (!has_out_grad(po)) return;
      if (pa->requires_grad) {
        pa->ensure_grad();  // dA += dC·B
        gemm(false, false, m, k, n, 1.0, po->grad.data(), pb->val.data(), 1.0, pa->grad.data());
      }
      if (pb->requires_grad) {
        pb->ensure_grad();  // dB += dCᵀ·A
        gemm(true, false, n, k, m, 1.0, po->grad.data(), pa->val.data(), 1.0, pb->grad.data());
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor out = make_output(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (recording({&a, &b})) {
    auto pa = a.p, pb = b.p, po = out.p;
    attach(out, [pa, pb, po, n] {
      if (!has_out_grad(po)) return;
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int64_t i = 0; i < n; ++i) pa->grad[i] += po->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int64_t i = 0; i < n; ++i) pb->grad[i] += po->grad[i];
      }
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  check_2d(a, "add_rowvec");
  check_defined(b, "add_rowvec");
  const int m = a.dim(0), n = a.dim(1);
  if (b.numel() != n)
    throw std::invalid_argument("add_rowvec: row vector " + shape_str(b.shape()) +
                                " does not match columns of " + shape_str(a.shape()));
  Tensor out = make_output({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[i * n + j] = a.data()[i * n + j] + b.data()[j];
  if (recording({&a, &b})) {
    auto pa = a.p, pb = b.p, po = out.p;
    attach(out, [pa, pb, po, m, n] {
      if (!has_out_grad(po)) return;
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) pa->grad[i] += po->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) pb->grad[j] += po->grad[i * n + j];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  check_defined(a, "scale");
  Tensor out = make_output(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
  if (recording({&a})) {
    auto pa = a.p, po = out.p;
    attach(out, [pa, po, s, n] {
      if (!has_out_grad(po) || !pa->requires_grad) return;
      pa->ensure_grad();
      for (int64_t i = 0; i < n; ++i) pa->grad[i] += s * po->grad[i];
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  check_defined(a, "relu");
  Tensor out = make_output(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  if (recording({&a})) {
    auto pa = a.p, po = out.p;
    attach(out, [pa, po, n] {
      if (!has_out_grad(po) || !pa->requires_grad) return;
      pa->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        if (pa->val[i] > 0.0) pa->grad[i] += po->grad[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  check_defined(a, "sigmoid");
  Tensor out = make_output(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double x = a.data()[i];
    // evaluate on the negative branch to avoid exp overflow
    out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  if (recording({&a})) {
    auto pa = a.p, po = out.p;
    attach(out, [pa, po, n] {
      if (!has_out_grad(po) || !pa->requires_grad) return;
      pa->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const double y = po->val[i];
        pa->grad[i] += po->grad[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  check_defined(a, "softmax");
  const int nd = a.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                shape_str(a.shape()));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  const int64_t len = a.dim(axis);
  for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);

  Tensor out = make_output(a.shape());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = a.data()[base];
      for (int64_t j = 1; j < len; ++j) mx = std::max(mx, a.data()[base + j * inner]);
      double z = 0.0;
      for (int64_t j = 0; j < len; ++j) {
        const double e = std::exp(a.data()[base + j * inner] - mx);
        out.data()[base + j * inner] = e;
        z += e;
      }
      for (int64_t j = 0; j < len; ++j) out.data()[base + j * inner] /= z;
    }
  }
  if (recording({&a})) {
    auto pa = a.p, po = out.p;
    attach(out, [pa, po, outer, len, inner] {
      if (!has_out_grad(po) || !pa->requires_grad) return;
      pa->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * len * inner + in;
          double dot = 0.0;
          for (int64_t j = 0; j < len; ++j)
            dot += po->val[base + j * inner] * po->grad[base + j * inner];
          for (int64_t j = 0; j < len; ++j) {
            const int64_t idx = base + j * inner;
            pa->grad[idx] += po->val[idx] * (po->grad[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  check_defined(x, "layer_norm");
  check_defined(gain, "layer_norm");
  check_defined(bias, "layer_norm");
  const int e = x.dim(x.ndim() - 1);
  if (gain.numel() != e || bias.numel() != e)
    throw std::invalid_argument("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                                shape_str(bias.shape()) + " do not match last dim of " +
                                shape_str(x.shape()));
  const int64_t rows = x.numel() / e;
  Tensor out = make_output(x.shape());
  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> inv_sd(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * e;
    double mu = 0.0;
    for (int j = 0; j < e; ++j) mu += xr[j];
    mu /= e;
    double var = 0.0;
    for (int j = 0; j < e; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= e;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_sd[static_cast<size_t>(r)] = inv;
    for (int j = 0; j < e; ++j) {
      const double xh = (xr[j] - mu) * inv;
      xhat[static_cast<size_t>(r * e + j)] = xh;
      out.data()[r * e + j] = gain.data()[j] * xh + bias.data()[j];
    }
  }
  if (recording({&x, &gain, &bias})) {
    auto px = x.p, pg = gain.p, pb = bias.p, po = out.p;
    attach(out, [px, pg, pb, po, rows, e, xhat = std::move(xhat), inv_sd = std::move(inv_sd)] {
      if (!has_out_grad(po)) return;
      for (int64_t r = 0; r < rows; ++r) {
        const double* dy = po->grad.data() + r * e;
        const double* xh = xhat.data() + r * e;
        if (pg->requires_grad) {
          pg->ensure_grad();
          for (int j = 0; j < e; ++j) pg->grad[j] += dy[j] * xh[j];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int j = 0; j < e; ++j) pb->grad[j] += dy[j];
        }
        if (px->requires_grad) {
          px->ensure_grad();
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < e; ++j) {
            const double dyh = dy[j] * pg->val[j];
            m1 += dyh;
            m2 += dyh * xh[j];
          }
          m1 /= e;
          m2 /= e;
          const double inv = inv_sd[static_cast<size_t>(r)];
          for (int j = 0; j < e; ++j) {
            const double dyh = dy[j] * pg->val[j];
            px->grad[r * e + j] += inv * (dyh - m1 - xh[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& mask) {
  check_2d(logits, "cross_entropy");
  const int n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  if (!mask.empty() && static_cast<int>(mask.size()) != n)
    throw std::invalid_argument("cross_entropy: mask size mismatch");
  int active = 0;
  for (int i = 0; i < n; ++i)
    if (mask.empty() || mask[static_cast<size_t>(i)]) ++active;
  if (active == 0) throw std::invalid_argument("cross_entropy: every position is masked");
  for (int i = 0; i < n; ++i) {
    const bool on = mask.empty() || mask[static_cast<size_t>(i)];
    if (on && (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= v))
      throw std::invalid_argument("cross_entropy: target " +
                                  std::to_string(targets[static_cast<size_t>(i)]) +
                                  " outside vocab of " + std::to_string(v));
  }

  std::vector<double> probs(static_cast<size_t>(n) * v, 0.0);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!(mask.empty() || mask[static_cast<size_t>(i)])) continue;
    const double* row = logits.data() + static_cast<int64_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) {
      const double ev = std::exp(row[j] - mx);
      probs[static_cast<size_t>(i) * v + j] = ev;
      z += ev;
    }
    for (int j = 0; j < v; ++j) probs[static_cast<size_t>(i) * v + j] /= z;
    loss += std::log(z) + mx - row[targets[static_cast<size_t>(i)]];
  }
  loss /= active;

  Tensor out = Tensor::from({1}, {loss});
  if (recording({&logits})) {
    auto pl = logits.p, po = out.p;
    auto tg = targets;
    auto mk = mask;
    attach(out, [pl, po, n, v, active, probs = std::move(probs), tg = std::move(tg),
                 mk = std::move(mk)] {
      if (!has_out_grad(po) || !pl->requires_grad) return;
      pl->ensure_grad();
      const double go = po->grad[0] / active;
      for (int i = 0; i < n; ++i) {
        if (!(mk.empty() || mk[static_cast<size_t>(i)])) continue;
        double* g = pl->grad.data() + static_cast<int64_t>(i) * v;
        const double* p = probs.data() + static_cast<size_t>(i) * v;
        for (int j = 0; j < v; ++j) g[j] += go * p[j];
        g[tg[static_cast<size_t>(i)]] -= go;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
  check_2d(a, "gather_rows");
  const int r = a.dim(0), e = a.dim(1);
  for (int idx : rows)
    if (idx < 0 || idx >= r)
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx) +
                                  " outside " + shape_str(a.shape()));
  const int n = static_cast<int>(rows.size());
  Tensor out = make_output({n, e});
  for (int i = 0; i < n; ++i)
    std::copy_n(a.data() + static_cast<int64_t>(rows[static_cast<size_t>(i)]) * e, e,
                out.data() + static_cast<int64_t>(i) * e);
  if (recording({&a})) {
    auto pa = a.p, po = out.p;
    auto rws = rows;
    attach(out, [pa, po, n, e, rws = std::move(rws)] {
      if (!has_out_grad(po) || !pa->requires_grad) return;
      pa->ensure_grad();
      for (int i = 0; i < n; ++i) {
        double* dst = pa->grad.data() + static_cast<int64_t>(rws[static_cast<size_t>(i)]) * e;
        const double* src = po->grad.data() + static_cast<int64_t>(i) * e;
        for (int j = 0; j < e; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& a) {
  check_2d(a, "mean_rows");
  const int n = a.dim(0), e = a.dim(1);
  Tensor out = make_output({1, e});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < e; ++j) out.data()[j] += a.data()[static_cast<int64_t>(i) * e + j];
  for (int j = 0; j < e; ++j) out.data()[j] /= n;
  if (recording({&a})) {
    auto pa = a.p, po = out.p;
    attach(out, [pa, po, n, e] {
      if (!has_out_grad(po) || !pa->requires_grad) return;
      pa->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < e; ++j)
          pa->grad[static_cast<int64_t>(i) * e + j] += po->grad[j] / n;
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  check_defined(a, "sum");
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a.data()[i];
  Tensor out = Tensor::from({1}, {s});
  if (recording({&a})) {
    auto pa = a.p, po = out.p;
    const int64_t n = a.numel();
    attach(out, [pa, po, n] {
      if (!has_out_grad(po) || !pa->requires_grad) return;
      pa->ensure_grad();
      for (int64_t i = 0; i < n; ++i) pa->grad[i] += po->grad[0];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int col0, int len) {
  check_2d(a, "slice_cols");
  const int m = a.dim(0), n = a.dim(1);
  if (col0 < 0 || len <= 0 || col0 + len > n)
    throw std::invalid_argument("slice_cols: [" + std::to_string(col0) + ", " +
                                std::to_string(col0 + len) + ") outside " + shape_str(a.shape()));
  Tensor out = make_output({m, len});
  for (int i = 0; i < m; ++i)
    std::copy_n(a.data() + static_cast<int64_t>(i) * n + col0, len,
                out.data() + static_cast<int64_t>(i) * len);
  if (recording({&a})) {
    auto pa = a.p, po = out.p;
    attach(out, [pa, po, m, n, col0, len] {
      if (!has_out_grad(po) || !pa->requires_grad) return;
      pa->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j)
          pa->grad[static_cast<int64_t>(i) * n + col0 + j] +=
              po->grad[static_cast<int64_t>(i) * len + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const Tensor& t : parts) {
    check_2d(t, "concat_cols");
    if (t.dim(0) != m)
      throw std::invalid_argument("concat_cols: row mismatch, " + shape_str(t.shape()) +
                                  " vs " + shape_str(parts[0].shape()));
    total += t.dim(1);
  }
  Tensor out = make_output({m, total});
  int off = 0;
  for (const Tensor& t : parts) {
    const int w = t.dim(1);
    for (int i = 0; i < m; ++i)
      std::copy_n(t.data() + static_cast<int64_t>(i) * w, w,
                  out.data() + static_cast<int64_t>(i) * total + off);
    off += w;
  }
  bool rec = grad_recording_enabled();
  if (rec) {
    bool any = false;
    for (const Tensor& t : parts) any = any || t.requires_grad();
    rec = any;
  }
  if (rec) {
    std::vector<std::shared_ptr<TensorData>> ps;
    ps.reserve(parts.size());
    for (const Tensor& t : parts) ps.push_back(t.p);
    auto po = out.p;
    attach(out, [ps = std::move(ps), po, m, total] {
      if (!has_out_grad(po)) return;
      int off2 = 0;
      for (const auto& pa : ps) {
        const int w = pa->shape[1];
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              pa->grad[static_cast<int64_t>(i) * w + j] +=
                  po->grad[static_cast<int64_t>(i) * total + off2 + j];
        }
        off2 += w;
      }
    });
  }
  return out;
}

Tensor bernoulli_log_prob(const Tensor& g, const std::vector<uint8_t>& bits,
                          const std::vector<uint8_t>& free_mask) {
  check_defined(g, "bernoulli_log_prob");
  const int64_t d = g.numel();
  if (static_cast<int64_t>(bits.size()) != d)
    throw std::invalid_argument("bernoulli_log_prob: " + std::to_string(bits.size()) +
                                " bits for " + std::to_string(d) + " probabilities");
  if (!free_mask.empty() && static_cast<int64_t>(free_mask.size()) != d)
    throw std::invalid_argument("bernoulli_log_prob: free mask size mismatch");
  double lp = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    if (!free_mask.empty() && !free_mask[static_cast<size_t>(i)]) continue;
    const double gc = std::clamp(g.data()[i], kProbEps, 1.0 - kProbEps);
    lp += bits[static_cast<size_t>(i)] ? std::log(gc) : std::log(1.0 - gc);
  }
  Tensor out = Tensor::from({1}, {lp});
  if (recording({&g})) {
    auto pg = g.p, po = out.p;
    auto bt = bits;
    auto fm = free_mask;
    attach(out, [pg, po, d, bt = std::move(bt), fm = std::move(fm)] {
      if (!has_out_grad(po) || !pg->requires_grad) return;
      pg->ensure_grad();
      const double go = po->grad[0];
      for (int64_t i = 0; i < d; ++i) {
        if (!fm.empty() && !fm[static_cast<size_t>(i)]) continue;
        const double gv = pg->val[i];
        if (gv < kProbEps || gv > 1.0 - kProbEps) continue;  // clamped: flat
        pg->grad[i] += go * (bt[static_cast<size_t>(i)] ? 1.0 / gv : -1.0 / (1.0 - gv));
      }
    });
  }
  return out;
}

Tensor categorical_log_prob(const Tensor& h, int index) {
  check_defined(h, "categorical_log_prob");
  const int64_t j = h.numel();
  if (index < 0 || index >= j)
    throw std::invalid_argument("categorical_log_prob: index " + std::to_string(index) +
                                " outside " + std::to_string(j) + " categories");
  const double hc = std::clamp(h.data()[index], kProbEps, 1.0);
  Tensor out = Tensor::from({1}, {std::log(hc)});
  if (recording({&h})) {
    auto ph = h.p, po = out.p;
    attach(out, [ph, po, index] {
      if (!has_out_grad(po) || !ph->requires_grad) return;
      ph->ensure_grad();
      const double hv = ph->val[index];
      if (hv >= kProbEps) ph->grad[index] += po->grad[0] / hv;
    });
  }
  return out;
}

}  // namespace sd
