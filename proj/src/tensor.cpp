#include "nexus/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "nexus/error.hpp"

namespace nexus {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<detail::Node> new_node(Shape shape, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  const std::size_t count = shape_size(shape);
  n->shape = std::move(shape);
  n->value.assign(count, 0.0);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(count, 0.0);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_shape(const DiffArray& a, const DiffArray& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank_at_least(const DiffArray& x, std::size_t r, const char* op) {
  if (x.rank() < r) {
    throw ShapeError(std::string(op) + ": expected rank >= " + std::to_string(r) + ", got " + shape_str(x.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n], all row-major.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += G[m x n] * B[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * G[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// DiffArray

DiffArray DiffArray::zeros(Shape shape, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-length dimension in shape " + shape_str(shape));
  }
  return DiffArray(new_node(std::move(shape), requires_grad));
}

DiffArray DiffArray::full(Shape shape, double fill, bool requires_grad) {
  DiffArray a = zeros(std::move(shape), requires_grad);
  std::fill(a.node_->value.begin(), a.node_->value.end(), fill);
  return a;
}

DiffArray DiffArray::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  }
  DiffArray a = zeros(std::move(shape), requires_grad);
  a.node_->value = std::move(values);
  return a;
}

DiffArray DiffArray::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

double DiffArray::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar array " + shape_str(shape()));
  return node_->value[0];
}

void DiffArray::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

DiffArray DiffArray::clone() const {
  DiffArray c(new_node(node_->shape, node_->requires_grad));
  c.node_->value = node_->value;
  return c;
}

// ---------------------------------------------------------------------------
// Tape

DiffArray Tape::make_output(Shape shape, std::initializer_list<const DiffArray*> inputs) {
  bool needs = false;
  if (recording_) {
    for (const DiffArray* in : inputs) needs = needs || in->requires_grad();
  }
  return DiffArray(new_node(std::move(shape), needs));
}

void Tape::record(std::initializer_list<const DiffArray*> inputs, const DiffArray& output,
                  std::function<void()> backward) {
  if (!recording_ || !output.requires_grad()) return;
  Entry e;
  for (const DiffArray* in : inputs) {
    if (in->requires_grad()) e.inputs.push_back(in->node_id());
  }
  e.output = output.node_id();
  e.backward = std::move(backward);
  entries_.push_back(std::move(e));
}

void Tape::backward(const DiffArray& loss) {
  if (loss.size() != 1) {
    throw Error(ErrorCode::kInvalidInput, "backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.node_->grad[0] += 1.0;
  std::unordered_set<std::uint64_t> reachable{loss.node_id()};
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!reachable.contains(it->output)) continue;
    it->backward();
    reachable.insert(it->inputs.begin(), it->inputs.end());
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

DiffArray matmul(Tape& tape, const DiffArray& a, const DiffArray& b) {
  const bool batched = a.rank() == 3 && b.rank() == 3;
  const bool plain = a.rank() == 2 && b.rank() == 2;
  if (!batched && !plain) {
    throw ShapeError("matmul: expected rank-2 or batched rank-3 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(off), k = a.dim(off + 1), n = b.dim(off + 1);
  if (b.dim(off) != k || (batched && b.dim(0) != batch)) {
    throw ShapeError("matmul: dimension mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  DiffArray out = tape.make_output(out_shape, {&a, &b});
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.mutable_values().data();
    for (std::size_t t = 0; t < batch; ++t) gemm_nn(av + t * m * k, bv + t * k * n, ov + t * m * n, m, k, n);
  }
  tape.record({&a, &b}, out, [a, b, out, batch, m, k, n]() mutable {
    const double* g = out.grad().data();
    for (std::size_t t = 0; t < batch; ++t) {
      if (a.requires_grad())
        gemm_nt(g + t * m * n, b.values().data() + t * k * n, a.mutable_grad().data() + t * m * k, m, k, n);
      if (b.requires_grad())
        gemm_tn(a.values().data() + t * m * k, g + t * m * n, b.mutable_grad().data() + t * k * n, m, k, n);
    }
  });
  return out;
}

DiffArray pointwise_conv(Tape& tape, const DiffArray& x, const DiffArray& w) {
  require_rank_at_least(x, 1, "pointwise_conv");
  if (w.rank() != 2 || w.dim(0) != x.shape().back()) {
    throw ShapeError("pointwise_conv: channel mismatch, input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  const std::size_t cin = w.dim(0), cout = w.dim(1);
  const std::size_t rows = x.size() / cin;
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  DiffArray out = tape.make_output(out_shape, {&x, &w});
  gemm_nn(x.values().data(), w.values().data(), out.mutable_values().data(), rows, cin, cout);
  tape.record({&x, &w}, out, [x, w, out, rows, cin, cout]() mutable {
    const double* g = out.grad().data();
    if (x.requires_grad()) gemm_nt(g, w.values().data(), x.mutable_grad().data(), rows, cin, cout);
    if (w.requires_grad()) gemm_tn(x.values().data(), g, w.mutable_grad().data(), rows, cin, cout);
  });
  return out;
}

DiffArray conv1d(Tape& tape, const DiffArray& x, const DiffArray& kernel, ConvMode mode) {
  require_rank_at_least(x, 2, "conv1d");
  const std::size_t steps = x.dim(x.rank() - 2);
  const std::size_t cin = x.dim(x.rank() - 1);
  const std::size_t series = x.size() / (steps * cin);

  std::size_t width = 0, cout = cin;
  if (mode == ConvMode::kDepthwise) {
    if (kernel.rank() != 2 || kernel.dim(0) != cin) {
      throw ShapeError("conv1d(depthwise): kernel " + shape_str(kernel.shape()) + " does not match input " +
                       shape_str(x.shape()));
    }
    width = kernel.dim(1);
  } else {
    if (kernel.rank() != 3 || kernel.dim(1) != cin) {
      throw ShapeError("conv1d(full): kernel " + shape_str(kernel.shape()) + " does not match input " +
                       shape_str(x.shape()));
    }
    width = kernel.dim(0);
    cout = kernel.dim(2);
  }
  if (width % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(width));
  const auto pad = static_cast<std::ptrdiff_t>((width - 1) / 2);

  Shape out_shape = x.shape();
  out_shape.back() = cout;
  DiffArray out = tape.make_output(out_shape, {&x, &kernel});

  // Taps falling outside [0, steps) read zeros.
  auto for_each_tap = [steps, width, pad](auto&& fn) {
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < width; ++j) {
        const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
        fn(t, j, static_cast<std::size_t>(src));
      }
    }
  };

  {
    const double* xv = x.values().data();
    const double* kv = kernel.values().data();
    double* ov = out.mutable_values().data();
    for (std::size_t s = 0; s < series; ++s) {
      const double* xs = xv + s * steps * cin;
      double* os = ov + s * steps * cout;
      if (mode == ConvMode::kDepthwise) {
        for_each_tap([&](std::size_t t, std::size_t j, std::size_t src) {
          for (std::size_t c = 0; c < cin; ++c) os[t * cout + c] += kv[c * width + j] * xs[src * cin + c];
        });
      } else {
        for_each_tap([&](std::size_t t, std::size_t j, std::size_t src) {
          gemm_nn(xs + src * cin, kv + j * cin * cout, os + t * cout, 1, cin, cout);
        });
      }
    }
  }

  tape.record({&x, &kernel}, out, [x, kernel, out, mode, series, steps, cin, cout, width, for_each_tap]() mutable {
    const double* g = out.grad().data();
    const double* xv = x.values().data();
    const double* kv = kernel.values().data();
    double* gx = x.requires_grad() ? x.mutable_grad().data() : nullptr;
    double* gk = kernel.requires_grad() ? kernel.mutable_grad().data() : nullptr;
    for (std::size_t s = 0; s < series; ++s) {
      const double* gs = g + s * steps * cout;
      const double* xs = xv + s * steps * cin;
      if (mode == ConvMode::kDepthwise) {
        for_each_tap([&](std::size_t t, std::size_t j, std::size_t src) {
          for (std::size_t c = 0; c < cin; ++c) {
            const double go = gs[t * cout + c];
            if (gx) gx[s * steps * cin + src * cin + c] += kv[c * width + j] * go;
            if (gk) gk[c * width + j] += xs[src * cin + c] * go;
          }
        });
      } else {
        for_each_tap([&](std::size_t t, std::size_t j, std::size_t src) {
          if (gx) gemm_nt(gs + t * cout, kv + j * cin * cout, gx + s * steps * cin + src * cin, 1, cin, cout);
          if (gk) gemm_tn(xs + src * cin, gs + t * cout, gk + j * cin * cout, 1, cin, cout);
        });
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

DiffArray add(Tape& tape, const DiffArray& a, const DiffArray& b) {
  require_same_shape(a, b, "add");
  DiffArray out = tape.make_output(a.shape(), {&a, &b});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  tape.record({&a, &b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

DiffArray sub(Tape& tape, const DiffArray& a, const DiffArray& b) {
  require_same_shape(a, b, "sub");
  DiffArray out = tape.make_output(a.shape(), {&a, &b});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
  tape.record({&a, &b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

DiffArray mul(Tape& tape, const DiffArray& a, const DiffArray& b) {
  require_same_shape(a, b, "mul");
  DiffArray out = tape.make_output(a.shape(), {&a, &b});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  tape.record({&a, &b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
  return out;
}

DiffArray scale(Tape& tape, const DiffArray& x, double factor) {
  DiffArray out = tape.make_output(x.shape(), {&x});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  tape.record({&x}, out, [x, out, factor]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
  return out;
}

DiffArray add_bias(Tape& tape, const DiffArray& x, const DiffArray& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || bias.dim(0) != x.shape().back()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  }
  const std::size_t c = bias.dim(0);
  DiffArray out = tape.make_output(x.shape(), {&x, &bias});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + bias[i % c];
  tape.record({&x, &bias}, out, [x, bias, out, c]() mutable {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
    }
  });
  return out;
}

DiffArray scale_shift(Tape& tape, const DiffArray& x, const DiffArray& gamma, const DiffArray& beta) {
  if (gamma.rank() != 1 || beta.shape() != gamma.shape() || gamma.dim(0) != x.shape().back()) {
    throw ShapeError("scale_shift: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                     " do not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t c = gamma.dim(0);
  DiffArray out = tape.make_output(x.shape(), {&x, &gamma, &beta});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * gamma[i % c] + beta[i % c];
  tape.record({&x, &gamma, &beta}, out, [x, gamma, beta, out, c]() mutable {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gamma[i % c];
    }
    if (gamma.requires_grad()) {
      auto gg = gamma.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gg[i % c] += g[i] * x[i];
    }
    if (beta.requires_grad()) {
      auto gb = beta.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
    }
  });
  return out;
}

DiffArray broadcast_mul(Tape& tape, const DiffArray& x, const DiffArray& w) {
  // w's shape must be a prefix of x's shape; w is repeated over the trailing axes.
  if (w.rank() > x.rank() || !std::equal(w.shape().begin(), w.shape().end(), x.shape().begin())) {
    throw ShapeError("broadcast_mul: " + shape_str(w.shape()) + " is not a leading sub-shape of " +
                     shape_str(x.shape()));
  }
  const std::size_t inner = x.size() / w.size();
  DiffArray out = tape.make_output(x.shape(), {&x, &w});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * w[i / inner];
  tape.record({&x, &w}, out, [x, w, out, inner]() mutable {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * w[i / inner];
    }
    if (w.requires_grad()) {
      auto gw = w.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gw[i / inner] += g[i] * x[i];
    }
  });
  return out;
}

DiffArray sigmoid(Tape& tape, const DiffArray& x) {
  DiffArray out = tape.make_output(x.shape(), {&x});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = x[i];
    // Branches keep exp() from overflowing for large |v|.
    o[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  tape.record({&x}, out, [x, out]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = out[i];
      gx[i] += g[i] * s * (1.0 - s);
    }
  });
  return out;
}

DiffArray relu(Tape& tape, const DiffArray& x) {
  DiffArray out = tape.make_output(x.shape(), {&x});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0 ? x[i] : 0.0;
  tape.record({&x}, out, [x, out]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0) gx[i] += g[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Axis operations

DiffArray softmax(Tape& tape, const DiffArray& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "softmax");
  DiffArray out = tape.make_output(x.shape(), {&x});
  auto o = out.mutable_values();
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t b = 0; b < s.inner; ++b) {
      const std::size_t base = a * s.n * s.inner + b;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) mx = std::max(mx, x[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double e = std::exp(x[base + i * s.inner] - mx);
        o[base + i * s.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < s.n; ++i) o[base + i * s.inner] /= total;
    }
  }
  tape.record({&x}, out, [x, out, s]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t b = 0; b < s.inner; ++b) {
        const std::size_t base = a * s.n * s.inner + b;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) dot += g[base + i * s.inner] * out[base + i * s.inner];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = base + i * s.inner;
          gx[k] += out[k] * (g[k] - dot);
        }
      }
    }
  });
  return out;
}

DiffArray layer_norm(Tape& tape, const DiffArray& x, std::size_t axis, double eps) {
  const AxisSplit s = split_at(x.shape(), axis, "layer_norm");
  if (s.n < 2) {
    throw Error(ErrorCode::kInvalidInput, "layer_norm: degenerate axis of length 1 in shape " + shape_str(x.shape()));
  }
  DiffArray out = tape.make_output(x.shape(), {&x});
  std::vector<double> inv_std(s.outer * s.inner);
  auto o = out.mutable_values();
  const double n = static_cast<double>(s.n);
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t b = 0; b < s.inner; ++b) {
      const std::size_t base = a * s.n * s.inner + b;
      double mean = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) mean += x[base + i * s.inner];
      mean /= n;
      double var = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double d = x[base + i * s.inner] - mean;
        var += d * d;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[a * s.inner + b] = is;
      for (std::size_t i = 0; i < s.n; ++i) o[base + i * s.inner] = (x[base + i * s.inner] - mean) * is;
    }
  }
  tape.record({&x}, out, [x, out, s, n, inv_std = std::move(inv_std)]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t b = 0; b < s.inner; ++b) {
        const std::size_t base = a * s.n * s.inner + b;
        double mean_g = 0.0, mean_gy = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = base + i * s.inner;
          mean_g += g[k];
          mean_gy += g[k] * out[k];
        }
        mean_g /= n;
        mean_gy /= n;
        const double is = inv_std[a * s.inner + b];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = base + i * s.inner;
          gx[k] += is * (g[k] - mean_g - out[k] * mean_gy);
        }
      }
    }
  });
  return out;
}

DiffArray global_pool(Tape& tape, const DiffArray& x, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  if (axes.empty() || axes.back() >= x.rank()) {
    throw ShapeError("global_pool: invalid axes for shape " + shape_str(x.shape()));
  }
  Shape out_shape;
  std::vector<bool> pooled(x.rank(), false);
  std::size_t count = 1;
  for (auto a : axes) {
    pooled[a] = true;
    count *= x.dim(a);
  }
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (!pooled[i]) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Map every input element to its output slot.
  std::vector<std::size_t> target(x.size());
  {
    std::vector<std::size_t> idx(x.rank(), 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
      std::size_t t = 0;
      for (std::size_t d = 0; d < x.rank(); ++d) {
        if (!pooled[d]) t = t * x.dim(d) + idx[d];
      }
      target[flat] = t;
      for (std::size_t d = x.rank(); d-- > 0;) {
        if (++idx[d] < x.dim(d)) break;
        idx[d] = 0;
      }
    }
  }
  DiffArray out = tape.make_output(out_shape, {&x});
  auto o = out.mutable_values();
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t i = 0; i < x.size(); ++i) o[target[i]] += x[i] * inv;
  tape.record({&x}, out, [x, out, inv, target = std::move(target)]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[target[i]] * inv;
  });
  return out;
}

DiffArray sum_axis(Tape& tape, const DiffArray& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "sum_axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape.push_back(1);
  DiffArray out = tape.make_output(out_shape, {&x});
  auto o = out.mutable_values();
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t b = 0; b < s.inner; ++b) o[a * s.inner + b] += x[(a * s.n + i) * s.inner + b];
  tape.record({&x}, out, [x, out, s]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t b = 0; b < s.inner; ++b) gx[(a * s.n + i) * s.inner + b] += g[a * s.inner + b];
  });
  return out;
}

DiffArray select(Tape& tape, const DiffArray& x, std::size_t axis, std::size_t index) {
  const AxisSplit s = split_at(x.shape(), axis, "select");
  if (index >= s.n) {
    throw ShapeError("select: index " + std::to_string(index) + " out of range for shape " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape.push_back(1);
  DiffArray out = tape.make_output(out_shape, {&x});
  auto o = out.mutable_values();
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t b = 0; b < s.inner; ++b) o[a * s.inner + b] = x[(a * s.n + index) * s.inner + b];
  tape.record({&x}, out, [x, out, s, index]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t b = 0; b < s.inner; ++b) gx[(a * s.n + index) * s.inner + b] += g[a * s.inner + b];
  });
  return out;
}

DiffArray reshape(Tape& tape, const DiffArray& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  DiffArray out = tape.make_output(std::move(shape), {&x});
  std::copy(x.values().begin(), x.values().end(), out.mutable_values().begin());
  tape.record({&x}, out, [x, out]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

DiffArray unfold(Tape& tape, const DiffArray& x, std::size_t patch, std::size_t stride) {
  require_rank_at_least(x, 2, "unfold");
  const std::size_t steps = x.dim(x.rank() - 2);
  const std::size_t feat = x.dim(x.rank() - 1);
  if (stride < 1) throw ConfigError("unfold: stride must be >= 1");
  if (patch < 1 || patch > steps) {
    throw ConfigError("unfold: patch length " + std::to_string(patch) + " exceeds sequence length " +
                      std::to_string(steps));
  }
  const std::size_t n_patches = (steps - patch) / stride + 1;
  const std::size_t series = x.size() / (steps * feat);
  const std::size_t width = patch * feat;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = n_patches;
  out_shape.back() = width;
  DiffArray out = tape.make_output(out_shape, {&x});
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t s = 0; s < series; ++s)
    for (std::size_t i = 0; i < n_patches; ++i)
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(s * steps * feat + i * stride * feat), width,
                  o.begin() + static_cast<std::ptrdiff_t>((s * n_patches + i) * width));
  tape.record({&x}, out, [x, out, series, steps, feat, n_patches, stride, width]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t s = 0; s < series; ++s)
      for (std::size_t i = 0; i < n_patches; ++i)
        for (std::size_t k = 0; k < width; ++k)
          gx[s * steps * feat + i * stride * feat + k] += g[(s * n_patches + i) * width + k];
  });
  return out;
}

DiffArray dropout(Tape& tape, const DiffArray& x, double rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  std::vector<double> mask(x.size());
  std::bernoulli_distribution keep(1.0 - rate);
  const double survivor_scale = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = keep(rng) ? survivor_scale : 0.0;
  DiffArray out = tape.make_output(x.shape(), {&x});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * mask[i];
  tape.record({&x}, out, [x, out, mask = std::move(mask)]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Scalar reductions

DiffArray mse(Tape& tape, const DiffArray& prediction, const DiffArray& target) {
  require_same_shape(prediction, target, "mse");
  DiffArray out = tape.make_output({1}, {&prediction, &target});
  const double n = static_cast<double>(prediction.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    acc += d * d;
  }
  out.mutable_values()[0] = acc / n;
  tape.record({&prediction, &target}, out, [prediction, target, out, n]() mutable {
    const double g = out.grad()[0];
    for (std::size_t i = 0; i < prediction.size(); ++i) {
      const double d = 2.0 * g * (prediction[i] - target[i]) / n;
      if (prediction.requires_grad()) prediction.mutable_grad()[i] += d;
      if (target.requires_grad()) target.mutable_grad()[i] -= d;
    }
  });
  return out;
}

DiffArray sum_squares(Tape& tape, const DiffArray& x) {
  DiffArray out = tape.make_output({1}, {&x});
  double acc = 0.0;
  for (double v : x.values()) acc += v * v;
  out.mutable_values()[0] = acc;
  tape.record({&x}, out, [x, out]() mutable {
    const double g = out.grad()[0];
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * g * x[i];
  });
  return out;
}

DiffArray sum_all(Tape& tape, const DiffArray& x) {
  DiffArray out = tape.make_output({1}, {&x});
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.mutable_values()[0] = acc;
  tape.record({&x}, out, [x, out]() mutable {
    const double g = out.grad()[0];
    for (auto& v : x.mutable_grad()) v += g;
  });
  return out;
}

}  // namespace nexus
