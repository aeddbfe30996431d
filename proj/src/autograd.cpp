#include "pgasr/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include <Eigen/Dense>

#include "pgasr/error.hpp"

namespace pgasr::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ConfigError(std::string("shape mismatch in ") + op + ": " + detail);
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error(op, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

bool tracks(const Tensor& t) { return t.defined() && t.requires_grad(); }

// Builds the result node and wires it into the tape when any input needs a
// gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<float> value, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor& in : inputs) any = any || tracks(in);
    if (any) {
      node->requires_grad = true;
      for (const Tensor& in : inputs)
        if (in.defined()) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Node& parent(Node& out, std::size_t i) { return *out.parents[i]; }

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::span<float> Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0F);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0F, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const std::size_t n = ag::numel(shape);
  return from_vector(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values, bool requires_grad) {
  if (ag::numel(shape) != values.size())
    throw ConfigError("tensor data size " + std::to_string(values.size()) + " does not match shape " +
                      shape_string(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

float Tensor::item() const {
  if (numel() != 1) throw ConfigError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return from_vector(shape(), node_->value, false); }

void Tensor::backward() {
  if (numel() != 1) throw ConfigError("backward() requires a scalar root");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_buffer()[0] += 1.0F;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::shared_ptr<const NodeOperator> NodeOperator::from_dense(const Eigen::MatrixXd& m) {
  auto op = std::make_shared<NodeOperator>();
  op->forward = graph::SparseMatrix::from_dense(m, 1e-12);
  op->transpose = op->forward.transposed();
  return op;
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<float> v(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](Node& out) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& in = parent(out, p);
      if (!in.requires_grad) continue;
      auto g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<float> v(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](Node& out) {
    Node& lhs = parent(out, 0);
    Node& rhs = parent(out, 1);
    if (lhs.requires_grad) {
      auto g = lhs.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (rhs.requires_grad) {
      auto g = rhs.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<float> v(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](Node& out) {
    Node& lhs = parent(out, 0);
    Node& rhs = parent(out, 1);
    if (lhs.requires_grad) {
      auto g = lhs.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * rhs.value[i];
    }
    if (rhs.requires_grad) {
      auto g = rhs.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * lhs.value[i];
    }
  });
}

Tensor scale(const Tensor& a, float s) {
  std::vector<float> v(a.data().begin(), a.data().end());
  for (float& e : v) e *= s;
  return make_result(a.shape(), std::move(v), {a}, [s](Node& out) {
    auto g = parent(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * out.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<float> v(a.data().begin(), a.data().end());
  for (float& e : v) e = e > 0.0F ? e : 0.0F;
  return make_result(a.shape(), std::move(v), {a}, [](Node& out) {
    auto g = parent(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (out.value[i] > 0.0F) g[i] += out.grad[i];
  });
}

Tensor tanh(const Tensor& a) {
  std::vector<float> v(a.data().begin(), a.data().end());
  for (float& e : v) e = std::tanh(e);
  return make_result(a.shape(), std::move(v), {a}, [](Node& out) {
    auto g = parent(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * (1.0F - out.value[i] * out.value[i]);
  });
}

namespace {
inline float logistic(float x) { return 1.0F / (1.0F + std::exp(-x)); }
}  // namespace

Tensor sigmoid(const Tensor& a) {
  std::vector<float> v(a.data().begin(), a.data().end());
  for (float& e : v) e = logistic(e);
  return make_result(a.shape(), std::move(v), {a}, [](Node& out) {
    auto g = parent(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * out.value[i] * (1.0F - out.value[i]);
  });
}

// --------------------------------------------------------------------- linear

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(0))
    shape_error("linear", shape_string(x.shape()) + " x " + shape_string(weight.shape()));
  const std::size_t cin = weight.dim(0);
  const std::size_t cout = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    shape_error("linear", "bias " + shape_string(bias.shape()));
  const std::size_t rows = x.numel() / cin;
  Shape shape = x.shape();
  shape.back() = cout;

  std::vector<float> v(rows * cout);
  MatMap y(v.data(), rows, cout);
  y.noalias() = ConstMatMap(x.data().data(), rows, cin) * ConstMatMap(weight.data().data(), cin, cout);
  if (bias.defined()) {
    Eigen::Map<const Eigen::RowVectorXf> b(bias.data().data(), cout);
    y.rowwise() += b;
  }
  return make_result(std::move(shape), std::move(v), {x, weight, bias},
                     [rows, cin, cout, has_bias = bias.defined()](Node& out) {
    ConstMatMap dy(out.grad.data(), rows, cout);
    Node& xin = parent(out, 0);
    Node& w = parent(out, 1);
    if (xin.requires_grad) {
      MatMap dx(xin.grad_buffer().data(), rows, cin);
      dx.noalias() += dy * ConstMatMap(w.value.data(), cin, cout).transpose();
    }
    if (w.requires_grad) {
      MatMap dw(w.grad_buffer().data(), cin, cout);
      dw.noalias() += ConstMatMap(xin.value.data(), rows, cin).transpose() * dy;
    }
    if (has_bias) {
      Node& b = parent(out, 2);
      if (b.requires_grad) {
        Eigen::Map<Eigen::RowVectorXf> db(b.grad_buffer().data(), cout);
        db += dy.colwise().sum();
      }
    }
  });
}

Tensor glu(const Tensor& x) {
  const std::size_t c2 = x.shape().back();
  if (c2 % 2 != 0) shape_error("glu", "last axis must be even, got " + shape_string(x.shape()));
  const std::size_t c = c2 / 2;
  const std::size_t rows = x.numel() / c2;
  Shape shape = x.shape();
  shape.back() = c;
  std::vector<float> v(rows * c);
  std::vector<float> gate(rows * c);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const float s = logistic(in[r * c2 + c + j]);
      gate[r * c + j] = s;
      v[r * c + j] = in[r * c2 + j] * s;
    }
  }
  return make_result(std::move(shape), std::move(v), {x},
                     [rows, c, c2, gate = std::move(gate)](Node& out) {
    Node& xin = parent(out, 0);
    auto g = xin.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const float s = gate[r * c + j];
        const float d = out.grad[r * c + j];
        g[r * c2 + j] += d * s;
        g[r * c2 + c + j] += d * xin.value[r * c2 + j] * s * (1.0F - s);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, float eps) {
  const std::size_t c = x.shape().back();
  if (gain.numel() != c || shift.numel() != c) shape_error("layer_norm", "gain/shift width");
  const std::size_t rows = x.numel() / c;
  std::vector<float> v(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(rows);
  const auto in = x.data();
  const auto gmm = gain.data();
  const auto bta = shift.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += in[r * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = in[r * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[r] = istd;
    for (std::size_t j = 0; j < c; ++j) {
      const float h = static_cast<float>(in[r * c + j] - mu) * istd;
      xhat[r * c + j] = h;
      v[r * c + j] = h * gmm[j] + bta[j];
    }
  }
  return make_result(x.shape(), std::move(v), {x, gain, shift},
                     [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& out) {
    Node& xin = parent(out, 0);
    Node& g = parent(out, 1);
    Node& b = parent(out, 2);
    if (g.requires_grad) {
      auto dg = g.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) dg[j] += out.grad[r * c + j] * xhat[r * c + j];
    }
    if (b.requires_grad) {
      auto db = b.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) db[j] += out.grad[r * c + j];
    }
    if (xin.requires_grad) {
      auto dx = xin.grad_buffer();
      const float inv_c = 1.0F / static_cast<float>(c);
      for (std::size_t r = 0; r < rows; ++r) {
        float sum_d = 0.0F;
        float sum_dx = 0.0F;
        for (std::size_t j = 0; j < c; ++j) {
          const float dh = out.grad[r * c + j] * g.value[j];
          sum_d += dh;
          sum_dx += dh * xhat[r * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
          const float dh = out.grad[r * c + j] * g.value[j];
          dx[r * c + j] += inv_std[r] * (dh - inv_c * sum_d - xhat[r * c + j] * inv_c * sum_dx);
        }
      }
    }
  });
}

Tensor dropout(const Tensor& x, float rate, std::mt19937_64* rng) {
  if (rate <= 0.0F || rng == nullptr) return x;
  if (rate >= 1.0F) throw ConfigError("dropout rate must be < 1");
  std::uniform_real_distribution<float> uniform(0.0F, 1.0F);
  const float keep_scale = 1.0F / (1.0F - rate);
  std::vector<float> mask(x.numel());
  for (float& m : mask) m = uniform(*rng) < rate ? 0.0F : keep_scale;
  std::vector<float> v(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = in[i] * mask[i];
  return make_result(x.shape(), std::move(v), {x}, [mask = std::move(mask)](Node& out) {
    auto g = parent(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * mask[i];
  });
}

// ----------------------------------------------------------- spatio-temporal

Tensor temporal_conv(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4 || weight.rank() != 3 || weight.dim(1) != x.dim(3))
    shape_error("temporal_conv", shape_string(x.shape()) + " * " + shape_string(weight.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  const std::size_t nodes = x.dim(2);
  const std::size_t cin = x.dim(3);
  const std::size_t taps = weight.dim(0);
  const std::size_t cout = weight.dim(2);
  if (bias.defined() && bias.numel() != cout) shape_error("temporal_conv", "bias width");
  const std::size_t rows = batch * steps * nodes;
  const std::size_t kc = taps * cin;

  // im2col: column block tau holds x[t - tau] (zero before the window).
  std::vector<float> cols(rows * kc, 0.0F);
  const auto in = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t tau = 0; tau < taps && tau <= t; ++tau)
        for (std::size_t m = 0; m < nodes; ++m) {
          const float* src = &in[((b * steps + (t - tau)) * nodes + m) * cin];
          float* dst = &cols[((b * steps + t) * nodes + m) * kc + tau * cin];
          std::copy(src, src + cin, dst);
        }

  std::vector<float> v(rows * cout);
  MatMap y(v.data(), rows, cout);
  y.noalias() = ConstMatMap(cols.data(), rows, kc) * ConstMatMap(weight.data().data(), kc, cout);
  if (bias.defined()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.data().data(), cout);

  return make_result(Shape{batch, steps, nodes, cout}, std::move(v), {x, weight, bias},
                     [=, cols = std::move(cols), has_bias = bias.defined()](Node& out) {
    ConstMatMap dy(out.grad.data(), rows, cout);
    Node& xin = parent(out, 0);
    Node& w = parent(out, 1);
    if (w.requires_grad) {
      MatMap dw(w.grad_buffer().data(), kc, cout);
      dw.noalias() += ConstMatMap(cols.data(), rows, kc).transpose() * dy;
    }
    if (has_bias) {
      Node& bn = parent(out, 2);
      if (bn.requires_grad) {
        Eigen::Map<Eigen::RowVectorXf> db(bn.grad_buffer().data(), cout);
        db += dy.colwise().sum();
      }
    }
    if (xin.requires_grad) {
      std::vector<float> dcols(rows * kc);
      MatMap dc(dcols.data(), rows, kc);
      dc.noalias() = dy * ConstMatMap(w.value.data(), kc, cout).transpose();
      auto dx = xin.grad_buffer();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < steps; ++t)
          for (std::size_t tau = 0; tau < taps && tau <= t; ++tau)
            for (std::size_t m = 0; m < nodes; ++m) {
              const float* src = &dcols[((b * steps + t) * nodes + m) * kc + tau * cin];
              float* dst = &dx[((b * steps + (t - tau)) * nodes + m) * cin];
              for (std::size_t j = 0; j < cin; ++j) dst[j] += src[j];
            }
    }
  });
}

namespace {

// out[g, i, :] += sum_k S[i, k] * in[g, k, :] for every leading group g.
void sparse_apply(const graph::SparseMatrix& s, const float* in, float* out, std::size_t groups,
                  std::size_t channels) {
  const std::size_t nodes = s.rows;
  for (std::size_t g = 0; g < groups; ++g) {
    const float* src = in + g * nodes * channels;
    float* dst = out + g * nodes * channels;
    for (std::size_t i = 0; i < nodes; ++i) {
      float* row = dst + i * channels;
      for (std::size_t k = s.row_ptr[i]; k < s.row_ptr[i + 1]; ++k) {
        const float a = s.values[k];
        const float* col = src + s.col_idx[k] * channels;
        for (std::size_t c = 0; c < channels; ++c) row[c] += a * col[c];
      }
    }
  }
}

}  // namespace

Tensor propagate(const Tensor& x, const std::shared_ptr<const NodeOperator>& op) {
  if (x.rank() < 2 || x.shape()[x.rank() - 2] != op->forward.cols)
    shape_error("propagate", shape_string(x.shape()) + " with " + std::to_string(op->forward.cols) + " nodes");
  const std::size_t channels = x.shape().back();
  const std::size_t groups = x.numel() / (op->forward.cols * channels);
  std::vector<float> v(x.numel(), 0.0F);
  sparse_apply(op->forward, x.data().data(), v.data(), groups, channels);
  return make_result(x.shape(), std::move(v), {x}, [op, groups, channels](Node& out) {
    sparse_apply(op->transpose, out.grad.data(), parent(out, 0).grad_buffer().data(), groups, channels);
  });
}

Tensor time_step(const Tensor& x, std::size_t t) {
  if (x.rank() != 4 || t >= x.dim(1)) shape_error("time_step", shape_string(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  const std::size_t block = x.dim(2) * x.dim(3);
  std::vector<float> v(batch * block);
  const auto in = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(&in[(b * steps + t) * block], block, &v[b * block]);
  return make_result(Shape{batch, x.dim(2), x.dim(3)}, std::move(v), {x},
                     [batch, steps, block, t](Node& out) {
    auto g = parent(out, 0).grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < block; ++i) g[(b * steps + t) * block + i] += out.grad[b * block + i];
  });
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t c = x.shape().back();
  if (begin + count > c || count == 0) shape_error("slice_last", shape_string(x.shape()));
  const std::size_t rows = x.numel() / c;
  Shape shape = x.shape();
  shape.back() = count;
  std::vector<float> v(rows * count);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(&in[r * c + begin], count, &v[r * count]);
  return make_result(std::move(shape), std::move(v), {x}, [rows, c, begin, count](Node& out) {
    auto g = parent(out, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < count; ++j) g[r * c + begin + j] += out.grad[r * count + j];
  });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_last", "no inputs");
  Shape lead = parts.front().shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape l = p.shape();
    const std::size_t w = l.back();
    l.pop_back();
    if (l != lead) shape_error("concat_last", shape_string(p.shape()));
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = numel(lead);
  std::vector<float> v(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(&in[r * widths[k]], widths[k], &v[r * total + offset]);
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);

  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(v);
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (g_grad_enabled && any) {
    node->requires_grad = true;
    for (const Tensor& p : parts) node->parents.push_back(p.node());
    node->backward = [rows, total, widths](Node& out) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        Node& p = *out.parents[k];
        if (p.requires_grad) {
          auto g = p.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += out.grad[r * total + off + j];
        }
        off += widths[k];
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  return make_result(Shape{1}, {static_cast<float>(s)}, {x}, [](Node& out) {
    auto g = parent(out, 0).grad_buffer();
    for (float& e : g) e += out.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0F / static_cast<float>(x.numel()));
}

Tensor balanced_abs_loss(const Tensor& pred, const Tensor& target, std::span<const float> weights,
                         float lambda, float scale_in, float scale_out) {
  require_same("balanced_abs_loss", pred, target);
  if (pred.rank() != 3 || pred.dim(2) != 2) shape_error("balanced_abs_loss", shape_string(pred.shape()));
  const std::size_t batch = pred.dim(0);
  const std::size_t nodes = pred.dim(1);
  if (weights.size() != batch)
    shape_error("balanced_abs_loss", std::to_string(weights.size()) + " weights for batch " + std::to_string(batch));
  const float coef[2] = {lambda * scale_in / static_cast<float>(nodes),
                         (1.0F - lambda) * scale_out / static_cast<float>(nodes)};
  const auto p = pred.data();
  const auto t = target.data();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double per_sample = 0.0;
    for (std::size_t m = 0; m < nodes; ++m)
      for (std::size_t ch = 0; ch < 2; ++ch) {
        const std::size_t i = (b * nodes + m) * 2 + ch;
        per_sample += coef[ch] * std::abs(static_cast<double>(p[i]) - t[i]);
      }
    total += weights[b] * per_sample;
  }
  std::vector<float> w(weights.begin(), weights.end());
  return make_result(Shape{1}, {static_cast<float>(total)}, {pred},
                     [batch, nodes, w = std::move(w), c0 = coef[0], c1 = coef[1], target](Node& out) {
    Node& pn = parent(out, 0);
    auto g = pn.grad_buffer();
    const auto t = target.data();
    const float coef[2] = {c0, c1};
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t m = 0; m < nodes; ++m)
        for (std::size_t ch = 0; ch < 2; ++ch) {
          const std::size_t i = (b * nodes + m) * 2 + ch;
          const float d = pn.value[i] - t[i];
          const float sgn = d > 0.0F ? 1.0F : (d < 0.0F ? -1.0F : 0.0F);
          g[i] += out.grad[0] * w[b] * coef[ch] * sgn;
        }
  });
}

}  // namespace pgasr::ag
