#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sd {

class Rng;

inline constexpr double kProbEps = 1e-6;       // probability clamp for log-probs
inline constexpr double kLayerNormEps = 1e-5;  // variance floor in layer norm
inline constexpr double kNegInf = -1e30;       // additive attention mask value

std::string shape_str(const std::vector<int>& shape);

struct TensorData {
  std::vector<int> shape;
  std::vector<double> val;   // row-major
  std::vector<double> grad;  // empty until touched; same length as val afterwards
  bool requires_grad = false;
  int64_t node = -1;  // producer node index on the recording tape, -1 for leaves
  uint64_t tape_gen = 0;

  void ensure_grad() {
    if (grad.empty()) grad.assign(val.size(), 0.0);
  }
};

// Shared-buffer handle with value semantics: copies alias the same storage,
// every op allocates a fresh output. Leaf tensors created with
// requires_grad=true get a zero grad buffer up front, so an unused parameter
// reads back an all-zero gradient.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor constant(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init for trainable weights
  static Tensor fan_in_init(std::vector<int> shape, int fan_in, Rng& rng);

  bool defined() const { return p != nullptr; }
  const std::vector<int>& shape() const { return p->shape; }
  int dim(int i) const { return p->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(p->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(p->val.size()); }

  double* data() { return p->val.data(); }
  const double* data() const { return p->val.data(); }
  std::vector<double>& values() { return p->val; }
  const std::vector<double>& values() const { return p->val; }
  double scalar() const;

  bool requires_grad() const { return p->requires_grad; }
  std::vector<double>& grad() {
    p->ensure_grad();
    return p->grad;
  }
  const std::vector<double>& grad() const {
    p->ensure_grad();
    return p->grad;
  }
  void zero_grad();

  std::shared_ptr<TensorData> p;
};

// Ordered record of executed ops. Construction makes it the active tape;
// ops whose inputs require grad push a backward closure. backward() runs the
// closures in reverse from the loss node; a second backward without reset()
// is an error.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void backward(const Tensor& loss);
  void reset();
  size_t size() const { return nodes_.size(); }

  static Tape* active();
  void record(const std::shared_ptr<TensorData>& out, std::function<void()> fn);

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
  uint64_t gen_;
  Tape* prev_;
};

// RAII scope that disables gradient recording (forward-only evaluation).
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

bool grad_recording_enabled();

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b);     // [m×k]·[k×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m×k]·[n×k]ᵀ
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& b); // [m×n] + [n] per row
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
// mean NLL over unmasked rows; empty mask counts every row
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& mask);
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);
Tensor mean_rows(const Tensor& a);  // [n×e] -> [1×e]
Tensor sum(const Tensor& a);        // -> scalar [1]
Tensor slice_cols(const Tensor& a, int col0, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);
// sum over free bits of log Bernoulli(bit | g_i), probabilities eps-clamped;
// empty free_mask treats every bit as free
Tensor bernoulli_log_prob(const Tensor& g, const std::vector<uint8_t>& bits,
                          const std::vector<uint8_t>& free_mask);
Tensor categorical_log_prob(const Tensor& h, int index);

// Multiply-accumulate instrumentation: every matmul-shaped forward op adds
// 2·m·n·k. This is the counting convention the analytic cost model follows
// (element-wise ops, softmax and layer norm are excluded).
uint64_t mac_flops();
void reset_mac_flops();

bool all_finite(const Tensor& t);

}  // namespace sd
