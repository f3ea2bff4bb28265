#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "prefsum/rng.hpp"

namespace prefsum {

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);
size_t shape_size(const Shape& s);

struct TensorNode;

// Value-semantic handle to a node in a reverse-mode computation graph.
// Backward functions are themselves built from graph ops, so gradients are
// differentiable and one inner optimization step can be differentiated
// through exactly (double backward).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  static Tensor from(const Shape& shape, std::vector<double> data);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                      double mean = 0.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  size_t size() const;
  size_t rank() const { return shape().size(); }
  double item() const;  // requires size == 1

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();  // leaves only; used by optimizers

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);  // leaves only
  bool is_leaf() const;

  bool has_grad() const;
  Tensor grad() const;  // accumulated leaf gradient; zeros when unset
  void zero_grad();
  void accumulate_grad(const Tensor& g);  // raw data add, never graphed

  // New leaf with copied data, cut from the graph.
  Tensor detach() const;

  // Stable identity of the underlying node (storage identity for ties).
  const void* node_id() const;

  TensorNode* node() const { return node_.get(); }

 private:
  friend Tensor make_node(Shape shape, std::vector<double> data,
                          std::vector<Tensor> parents,
                          std::function<std::vector<Tensor>(const Tensor&)> backward);
  std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  std::shared_ptr<TensorNode> grad;  // leaves only
  std::vector<Tensor> parents;
  // Maps the output gradient to per-parent gradients, using graph ops.
  std::function<std::vector<Tensor>(const Tensor&)> backward_fn;
};

// While a guard is alive, ops do not record backward functions.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// ---- primitive ops --------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor div(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);  // (r,k) x (k,c)
Tensor transpose(const Tensor& a);                // rank 2
Tensor relu(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor sum_all(const Tensor& a);   // -> {1}
Tensor mean_all(const Tensor& a);  // -> {1}
Tensor sum_over_rows(const Tensor& a);  // (r,c) -> {c}
Tensor sum_over_cols(const Tensor& a);  // (r,c) -> {r}
Tensor broadcast_rows(const Tensor& v, size_t rows);  // {c} -> (rows,c)
Tensor broadcast_cols(const Tensor& v, size_t cols);  // {r} -> (r,cols)
Tensor expand_scalar(const Tensor& s, const Shape& shape);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor gather_rows(const Tensor& m, const std::vector<int>& idx);
Tensor scatter_rows(const Tensor& g, const std::vector<int>& idx, size_t rows);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, size_t from, size_t to);
Tensor embed_cols(const Tensor& a, size_t at, size_t total_cols);

// ---- composites -----------------------------------------------------------
Tensor matvec(const Tensor& m, const Tensor& v);  // (r,c) x {c} -> {r}
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& h, const Tensor& gain, const Tensor& bias, double eps);

// Cross entropy against the smoothed target distribution (1-s on the gold
// id, s/(V-1) elsewhere), averaged over positions whose target != pad_id.
Tensor nll_label_smoothed(const Tensor& logits, const std::vector<int>& targets,
                          double smoothing, int pad_id = -1);

// Multiplies by a Bernoulli(1-rate)/(1-rate) mask drawn from rng.
Tensor dropout(const Tensor& a, double rate, Rng& rng);

// ---- autodiff -------------------------------------------------------------

// Accumulates gradients into leaf .grad slots. The loss must be scalar.
// With create_graph the sweep itself records ops so leaf grads obtained via
// grad() stay differentiable; backward() always stores detached data.
void backward(const Tensor& loss, bool create_graph = false);

// Functional gradients of a scalar loss with respect to `wrt`, leaving leaf
// .grad slots untouched. Unreachable entries get zeros. With create_graph
// the returned tensors are graph nodes suitable for higher-order use.
std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                         bool create_graph = false);

}  // namespace prefsum
