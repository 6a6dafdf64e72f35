#ifndef SAME_TENSOR_HPP
#define SAME_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace same {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_size(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  // Null for leaves. Captures input nodes by shared_ptr but its own node only
  // by raw pointer: owning itself would leak the whole graph.
  std::function<void()> backprop;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Value-semantics handle onto a tensor node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int size() const { return static_cast<int>(node_->data.size()); }
  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  double item() const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  friend class Tape;
  std::shared_ptr<TensorNode> node_;
};

// Define-by-run gradient tape. Nodes are recorded in creation order;
// backward() walks them exactly once in reverse. A null Tape* passed to the
// ops below means inference mode: same numerics, nothing recorded.
class Tape {
 public:
  void record(const Tensor& t) { nodes_.push_back(t.node()); }
  void backward(const Tensor& loss);
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<TensorNode>> nodes_;
};

// Primitive ops. All register a backward rule when tape != nullptr.
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double c);
// Broadcast row vector b (shape [n]) over every row of a (shape [m,n]).
Tensor add_row(Tape* tape, const Tensor& a, const Tensor& b);
Tensor softmax(Tape* tape, const Tensor& logits);  // over last axis
Tensor log_softmax(Tape* tape, const Tensor& logits);
Tensor cross_entropy(Tape* tape, const Tensor& logits, int target_class);
Tensor soft_cross_entropy(Tape* tape, const Tensor& logits,
                          const std::vector<double>& target_dist);
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta);  // normalizes each row
Tensor gelu(Tape* tape, const Tensor& x);
Tensor embedding_lookup(Tape* tape, const Tensor& table,
                        const std::vector<int>& ids);
Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape);
Tensor transpose2d(Tape* tape, const Tensor& x);
Tensor slice_cols(Tape* tape, const Tensor& x, int start, int count);
Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts);
Tensor reduce_sum(Tape* tape, const Tensor& x);  // scalar
Tensor reduce_mean(Tape* tape, const Tensor& x);
Tensor mean_rows(Tape* tape, const Tensor& x);  // [m,n] -> [n]

}  // namespace same

#endif
