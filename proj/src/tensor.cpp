#include "rtlab/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rtlab::numkit {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

constexpr double kGeluC = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
constexpr double kLnEps = 1e-5;                    // layer_norm variance floor

}  // namespace

Tensor Tensor::leaf(std::vector<std::size_t> shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape.size() > 2) shape_error("leaf", "rank > 2 unsupported");
  if (shape_size(shape) != values.size())
    shape_error("leaf", "value count does not match shape");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  n->on_tape = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::vector<double> v(shape_size(shape), 0.0);
  return leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double v) { return leaf({}, {v}, false); }

std::size_t Tensor::rows() const {
  if (rank() != 2) shape_error("rows", "tensor is not rank-2");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) shape_error("cols", "tensor is not rank-2");
  return node_->shape[1];
}

double Tensor::item() const {
  if (node_->value.size() != 1) shape_error("item", "tensor is not a scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) shape_error("at", "tensor is not rank-2");
  return node_->value.at(r * node_->shape[1] + c);
}

const std::vector<double>& Tensor::grad() const {
  if (!node_ || node_->grad.empty())
    throw std::logic_error("grad(): no gradient present on this tensor");
  return node_->grad;
}

Tensor Tape::make_out(std::vector<std::size_t> shape, std::vector<double> value,
                      bool participates) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->on_tape = participates;
  return Tensor(std::move(n));
}

void Tape::record(const Tensor& out, std::function<void()> back) {
  if (!out.node_->on_tape) return;
  ops_.push_back({out.node_, std::move(back)});
}

void Tape::ensure_grad(const std::shared_ptr<TensorNode>& n) {
  if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
}

void Tape::backward(const Tensor& loss) {
  if (replayed_) throw std::logic_error("Tape::backward called twice without reset");
  if (loss.size() != 1) throw std::invalid_argument("backward: loss is not a scalar");
  if (!loss.node_->on_tape)
    throw std::logic_error("backward: loss does not depend on any tracked tensor");
  replayed_ = true;
  ensure_grad(loss.node_);
  loss.node_->grad[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // nothing flowed into this op
    it->back();
  }
}

void Tape::reset() {
  ops_.clear();
  replayed_ = false;
}

// ---------------------------------------------------------------------------
// ops

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) shape_error("matmul", "operands must be rank-2");
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    shape_error("matmul", "inner dimensions differ: " + std::to_string(k) + " vs " +
                              std::to_string(k2));
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* po = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double va = pa[i * k + p];
      const double* pbr = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) po[j] += va * pbr[j];
    }
  }
  Tensor y = make_out({m, n}, std::move(out), participating(a) || participating(b));
  record(y, [an = a.node_, bn = b.node_, yn = y.node_, m, k, n]() {
    const double* dy = yn->grad.data();
    if (an->on_tape) {
      ensure_grad(an);
      double* da = an->grad.data();
      const double* pb = bn->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double* dyr = dy + i * n;
          const double* pbr = pb + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += dyr[j] * pbr[j];
          da[i * k + p] += s;
        }
    }
    if (bn->on_tape) {
      ensure_grad(bn);
      double* db = bn->grad.data();
      const double* pa = an->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double va = pa[i * k + p];
          const double* dyr = dy + i * n;
          double* dbr = db + p * n;
          for (std::size_t j = 0; j < n; ++j) dbr[j] += va * dyr[j];
        }
    }
  });
  return y;
}

Tensor Tape::transpose(const Tensor& x) {
  if (x.rank() != 2) shape_error("transpose", "operand must be rank-2");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  const double* px = x.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = px[i * n + j];
  Tensor y = make_out({n, m}, std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_, m, n]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    const double* dy = yn->grad.data();
    double* dx = xn->grad.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
  });
  return y;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", "shapes differ");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor y = make_out(a.shape(), std::move(out), participating(a) || participating(b));
  record(y, [an = a.node_, bn = b.node_, yn = y.node_]() {
    const auto& dy = yn->grad;
    if (an->on_tape) {
      ensure_grad(an);
      for (std::size_t i = 0; i < dy.size(); ++i) an->grad[i] += dy[i];
    }
    if (bn->on_tape) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < dy.size(); ++i) bn->grad[i] += dy[i];
    }
  });
  return y;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", "shapes differ");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  Tensor y = make_out(a.shape(), std::move(out), participating(a) || participating(b));
  record(y, [an = a.node_, bn = b.node_, yn = y.node_]() {
    const auto& dy = yn->grad;
    if (an->on_tape) {
      ensure_grad(an);
      for (std::size_t i = 0; i < dy.size(); ++i) an->grad[i] += dy[i];
    }
    if (bn->on_tape) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < dy.size(); ++i) bn->grad[i] -= dy[i];
    }
  });
  return y;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", "shapes differ");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor y = make_out(a.shape(), std::move(out), participating(a) || participating(b));
  record(y, [an = a.node_, bn = b.node_, yn = y.node_]() {
    const auto& dy = yn->grad;
    if (an->on_tape) {
      ensure_grad(an);
      for (std::size_t i = 0; i < dy.size(); ++i) an->grad[i] += dy[i] * bn->value[i];
    }
    if (bn->on_tape) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < dy.size(); ++i) bn->grad[i] += dy[i] * an->value[i];
    }
  });
  return y;
}

Tensor Tape::add_row_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1) shape_error("add_row_bias", "expects [n,d] and [d]");
  const std::size_t n = x.rows(), d = x.cols();
  if (b.size() != d) shape_error("add_row_bias", "bias length does not match columns");
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.values()[i * d + j] + b.values()[j];
  Tensor y = make_out({n, d}, std::move(out), participating(x) || participating(b));
  record(y, [xn = x.node_, bn = b.node_, yn = y.node_, n, d]() {
    const auto& dy = yn->grad;
    if (xn->on_tape) {
      ensure_grad(xn);
      for (std::size_t i = 0; i < dy.size(); ++i) xn->grad[i] += dy[i];
    }
    if (bn->on_tape) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) bn->grad[j] += dy[i * d + j];
    }
  });
  return y;
}

Tensor Tape::scale(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
  Tensor y = make_out(x.shape(), std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_, c]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i] * c;
  });
  return y;
}

Tensor Tape::add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + c;
  Tensor y = make_out(x.shape(), std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i];
  });
  return y;
}

Tensor Tape::exp(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.values()[i]);
  Tensor y = make_out(x.shape(), std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < yn->grad.size(); ++i)
      xn->grad[i] += yn->grad[i] * yn->value[i];
  });
  return y;
}

Tensor Tape::tanh(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
  Tensor y = make_out(x.shape(), std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < yn->grad.size(); ++i)
      xn->grad[i] += yn->grad[i] * (1.0 - yn->value[i] * yn->value[i]);
  });
  return y;
}

Tensor Tape::gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    const double u = kGeluC * (v + kGeluA * v * v * v);
    out[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  Tensor y = make_out(x.shape(), std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < yn->grad.size(); ++i) {
      const double v = xn->value[i];
      const double u = kGeluC * (v + kGeluA * v * v * v);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      xn->grad[i] += yn->grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
  return y;
}

namespace {

// Stable row softmax into out; row length d.
void softmax_row(const double* x, double* out, std::size_t d) {
  double mx = x[0];
  for (std::size_t j = 1; j < d; ++j)
    if (x[j] > mx) mx = x[j];
  double z = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = std::exp(x[j] - mx);
    z += out[j];
  }
  for (std::size_t j = 0; j < d; ++j) out[j] /= z;
}

}  // namespace

Tensor Tape::softmax_rows(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2) shape_error("softmax_rows", "rank-1 or rank-2 only");
  const std::size_t n = (x.rank() == 2) ? x.rows() : 1;
  const std::size_t d = (x.rank() == 2) ? x.cols() : x.size();
  if (d == 0) shape_error("softmax_rows", "empty rows");
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    softmax_row(x.values().data() + i * d, out.data() + i * d, d);
  Tensor y = make_out(x.shape(), std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_, n, d]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = yn->value.data() + i * d;
      const double* dy = yn->grad.data() + i * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += p[j] * dy[j];
      double* dx = xn->grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dx[j] += p[j] * (dy[j] - dot);
    }
  });
  return y;
}

Tensor Tape::softmax_causal(const Tensor& scores) {
  if (scores.rank() != 2 || scores.rows() != scores.cols())
    shape_error("softmax_causal", "expects a square matrix");
  const std::size_t n = scores.rows();
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    softmax_row(scores.values().data() + i * n, out.data() + i * n, i + 1);
  Tensor y = make_out({n, n}, std::move(out), participating(scores));
  record(y, [xn = scores.node_, yn = y.node_, n]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = yn->value.data() + i * n;
      const double* dy = yn->grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) dot += p[j] * dy[j];
      double* dx = xn->grad.data() + i * n;
      for (std::size_t j = 0; j <= i; ++j) dx[j] += p[j] * (dy[j] - dot);
    }
  });
  return y;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.rank() != 2) shape_error("layer_norm", "expects [n,d]");
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d)
    shape_error("layer_norm", "gain/bias length does not match columns");
  std::vector<double> out(n * d), xhat(n * d), inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.values().data() + i * d;
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += row[j];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) v += (row[j] - m) * (row[j] - m);
    v /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(v + kLnEps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - m) * is;
      xhat[i * d + j] = h;
      out[i * d + j] = gain.values()[j] * h + bias.values()[j];
    }
  }
  Tensor y = make_out({n, d}, std::move(out),
                      participating(x) || participating(gain) || participating(bias));
  record(y, [xn = x.node_, gn = gain.node_, bn = bias.node_, yn = y.node_,
             xh = std::move(xhat), is = std::move(inv_std), n, d]() {
    const double* dy = yn->grad.data();
    if (gn->on_tape) {
      ensure_grad(gn);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gn->grad[j] += dy[i * d + j] * xh[i * d + j];
    }
    if (bn->on_tape) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) bn->grad[j] += dy[i * d + j];
    }
    if (xn->on_tape) {
      ensure_grad(xn);
      for (std::size_t i = 0; i < n; ++i) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double g = dy[i * d + j] * gn->value[j];
          mean_g += g;
          mean_gx += g * xh[i * d + j];
        }
        mean_g /= static_cast<double>(d);
        mean_gx /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double g = dy[i * d + j] * gn->value[j];
          xn->grad[i * d + j] += is[i] * (g - mean_g - xh[i * d + j] * mean_gx);
        }
      }
    }
  });
  return y;
}

Tensor Tape::cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) shape_error("cross_entropy", "expects [n,V] logits");
  const std::size_t n = logits.rows(), V = logits.cols();
  if (targets.size() != n) shape_error("cross_entropy", "target count does not match rows");
  if (n == 0) shape_error("cross_entropy", "no rows");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= V)
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " outside vocabulary of size " + std::to_string(V));
  std::vector<double> probs(n * V);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    softmax_row(logits.values().data() + i * V, probs.data() + i * V, V);
    loss -= std::log(probs[i * V + static_cast<std::size_t>(targets[i])]);
  }
  loss /= static_cast<double>(n);
  Tensor y = make_out({}, {loss}, participating(logits));
  record(y, [xn = logits.node_, yn = y.node_, p = std::move(probs), targets, n, V]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    const double dl = yn->grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double* dx = xn->grad.data() + i * V;
      const double* pi = p.data() + i * V;
      for (std::size_t j = 0; j < V; ++j) dx[j] += dl * pi[j];
      dx[static_cast<std::size_t>(targets[i])] -= dl;
    }
  });
  return y;
}

Tensor Tape::bce_logits_select(const Tensor& logits, const std::vector<int>& index,
                               const std::vector<double>& labels) {
  if (logits.rank() != 2) shape_error("bce_logits_select", "expects [n,V] logits");
  const std::size_t n = logits.rows(), V = logits.cols();
  if (index.size() != n || labels.size() != n)
    shape_error("bce_logits_select", "index/label count does not match rows");
  if (n == 0) shape_error("bce_logits_select", "no rows");
  for (int t : index)
    if (t < 0 || static_cast<std::size_t>(t) >= V)
      throw std::out_of_range("bce_logits_select: index " + std::to_string(t) +
                              " outside width " + std::to_string(V));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.values()[i * V + static_cast<std::size_t>(index[i])];
    const double y01 = labels[i];
    loss += std::max(z, 0.0) - y01 * z + std::log1p(std::exp(-std::fabs(z)));
  }
  loss /= static_cast<double>(n);
  Tensor y = make_out({}, {loss}, participating(logits));
  record(y, [xn = logits.node_, yn = y.node_, index, labels, n, V]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    const double dl = yn->grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i * V + static_cast<std::size_t>(index[i]);
      const double sig = 1.0 / (1.0 + std::exp(-xn->value[k]));
      xn->grad[k] += dl * (sig - labels[i]);
    }
  });
  return y;
}

Tensor Tape::kl_diag_gaussian(const Tensor& mu, const Tensor& logvar) {
  if (mu.shape() != logvar.shape()) shape_error("kl_diag_gaussian", "shapes differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double m = mu.values()[i], lv = logvar.values()[i];
    kl += std::exp(lv) + m * m - 1.0 - lv;
  }
  kl *= 0.5;
  Tensor y = make_out({}, {kl}, participating(mu) || participating(logvar));
  record(y, [mn = mu.node_, ln = logvar.node_, yn = y.node_]() {
    const double dl = yn->grad[0];
    if (mn->on_tape) {
      ensure_grad(mn);
      for (std::size_t i = 0; i < mn->value.size(); ++i) mn->grad[i] += dl * mn->value[i];
    }
    if (ln->on_tape) {
      ensure_grad(ln);
      for (std::size_t i = 0; i < ln->value.size(); ++i)
        ln->grad[i] += dl * 0.5 * (std::exp(ln->value[i]) - 1.0);
    }
  });
  return y;
}

Tensor Tape::sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = make_out({}, {s}, participating(x));
  record(y, [xn = x.node_, yn = y.node_]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += yn->grad[0];
  });
  return y;
}

Tensor Tape::weighted_sum(const Tensor& x, const std::vector<double>& w) {
  if (w.size() != x.size()) shape_error("weighted_sum", "weight count does not match size");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.values()[i];
  Tensor y = make_out({}, {s}, participating(x));
  record(y, [xn = x.node_, yn = y.node_, w]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < w.size(); ++i) xn->grad[i] += yn->grad[0] * w[i];
  });
  return y;
}

Tensor Tape::gather_rows(const Tensor& x, const std::vector<int>& rows) {
  if (x.rank() != 2) shape_error("gather_rows", "expects [n,d]");
  const std::size_t n = x.rows(), d = x.cols();
  for (int r : rows)
    if (r < 0 || static_cast<std::size_t>(r) >= n)
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " outside " +
                              std::to_string(n));
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = x.values()[static_cast<std::size_t>(rows[i]) * d + j];
  Tensor y = make_out({rows.size(), d}, std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_, rows, d]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        xn->grad[static_cast<std::size_t>(rows[i]) * d + j] += yn->grad[i * d + j];
  });
  return y;
}

Tensor Tape::embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  return gather_rows(table, ids);
}

Tensor Tape::concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) shape_error("concat_cols", "no operands");
  const std::size_t n = xs[0].rows();
  std::size_t total = 0;
  bool part = false;
  for (const Tensor& x : xs) {
    if (x.rank() != 2 || x.rows() != n) shape_error("concat_cols", "row counts differ");
    total += x.cols();
    part = part || participating(x);
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (const Tensor& x : xs) {
    const std::size_t d = x.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        out[i * total + off + j] = x.values()[i * d + j];
    off += d;
  }
  Tensor y = make_out({n, total}, std::move(out), part);
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const Tensor& x : xs) nodes.push_back(x.node());
  record(y, [nodes, yn = y.node_, n, total]() {
    std::size_t off = 0;
    for (const auto& xn : nodes) {
      const std::size_t d = xn->value.size() / n;
      if (xn->on_tape) {
        ensure_grad(xn);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            xn->grad[i * d + j] += yn->grad[i * total + off + j];
      }
      off += d;
    }
  });
  return y;
}

Tensor Tape::slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  if (x.rank() != 2) shape_error("slice_cols", "expects [n,d]");
  const std::size_t n = x.rows(), d = x.cols();
  if (c0 >= c1 || c1 > d) shape_error("slice_cols", "bad column range");
  const std::size_t w = c1 - c0;
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.values()[i * d + c0 + j];
  Tensor y = make_out({n, w}, std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_, n, d, c0, w]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) xn->grad[i * d + c0 + j] += yn->grad[i * w + j];
  });
  return y;
}

Tensor Tape::dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) shape_error("dropout", "p must be in [0,1)");
  if (p == 0.0) return add_scalar(x, 0.0);  // identity, no mask draw
  std::vector<double> mask(x.size());
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = (rng.uniform() >= p) ? keep_scale : 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
  Tensor y = make_out(x.shape(), std::move(out), participating(x));
  record(y, [xn = x.node_, yn = y.node_, m = std::move(mask)]() {
    if (!xn->on_tape) return;
    ensure_grad(xn);
    for (std::size_t i = 0; i < m.size(); ++i) xn->grad[i] += yn->grad[i] * m[i];
  });
  return y;
}

}  // namespace rtlab::numkit
