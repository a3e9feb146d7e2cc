#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "rtlab/rng.hpp"

namespace rtlab::numkit {

// Dense row-major tensor of doubles, rank 0..2. Gradient storage exists only
// on tensors that participate in differentiation; a constant path never
// allocates one.
struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;   // empty until backward touches this node
  bool requires_grad = false;
  bool on_tape = false;       // leaf with requires_grad, or output of a recorded op
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(std::vector<std::size_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const;   // rank-2 only
  std::size_t cols() const;   // rank-2 only

  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& mutable_values() { return node_->value; }
  double item() const;        // rank-0/size-1 only
  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const;   // throws if absent

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
  friend class Tape;
};

// Reverse-mode tape: ops append local-gradient closures in execution order;
// backward replays them in reverse exactly once between resets.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& x);
  Tensor add(const Tensor& a, const Tensor& b);            // same shape
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);            // elementwise
  Tensor add_row_bias(const Tensor& x, const Tensor& b);   // [n,d] + [d]
  Tensor scale(const Tensor& x, double c);
  Tensor add_scalar(const Tensor& x, double c);
  Tensor exp(const Tensor& x);
  Tensor tanh(const Tensor& x);
  Tensor gelu(const Tensor& x);                            // tanh approximation
  Tensor softmax_rows(const Tensor& x);                    // [n,d] or [d]
  Tensor softmax_causal(const Tensor& scores);             // [n,n], row i over j<=i
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
  Tensor bce_logits_select(const Tensor& logits, const std::vector<int>& index,
                           const std::vector<double>& labels);
  Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& logvar);
  Tensor sum(const Tensor& x);
  Tensor weighted_sum(const Tensor& x, const std::vector<double>& w);
  Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
  Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
  Tensor concat_cols(const std::vector<Tensor>& xs);
  Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
  Tensor dropout(const Tensor& x, double p, Rng& rng);

  void backward(const Tensor& loss);
  void reset();
  std::size_t op_count() const { return ops_.size(); }

 private:
  struct OpRecord {
    std::shared_ptr<TensorNode> out;
    std::function<void()> back;
  };

  Tensor make_out(std::vector<std::size_t> shape, std::vector<double> value,
                  bool participates);
  void record(const Tensor& out, std::function<void()> back);
  static void ensure_grad(const std::shared_ptr<TensorNode>& n);
  static bool participating(const Tensor& t) { return t.node_->on_tape; }

  std::vector<OpRecord> ops_;
  bool replayed_ = false;
};

}  // namespace rtlab::numkit
