#include "prefsum/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace prefsum {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

size_t shape_size(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

namespace {

thread_local int g_no_grad_depth = 0;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + " shape mismatch: " + shape_str(a) +
                              " vs " + shape_str(b));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                shape_str(t.shape()));
}

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor make_node(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                 std::function<std::vector<Tensor>(const Tensor&)> backward) {
  Tensor t;
  t.node_ = std::make_shared<TensorNode>();
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(data);
  if (grad_enabled() && backward) {
    bool needs = false;
    for (const auto& p : parents)
      if (p.requires_grad()) needs = true;
    if (needs) {
      t.node_->requires_grad = true;
      t.node_->leaf = false;
      t.node_->parents = std::move(parents);
      t.node_->backward_fn = std::move(backward);
    }
  }
  return t;
}

namespace {

Tensor leaf_from(Shape shape, std::vector<double> data) {
  return make_node(std::move(shape), std::move(data), {}, nullptr);
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape) {
  return leaf_from(shape, std::vector<double>(shape_size(shape), 0.0));
}

Tensor Tensor::ones(const Shape& shape) {
  return leaf_from(shape, std::vector<double>(shape_size(shape), 1.0));
}

Tensor Tensor::full(const Shape& shape, double value) {
  return leaf_from(shape, std::vector<double>(shape_size(shape), value));
}

Tensor Tensor::scalar(double value) { return leaf_from({1}, {value}); }

Tensor Tensor::from(const Shape& shape, std::vector<double> data) {
  if (data.size() != shape_size(shape))
    throw std::invalid_argument("Tensor::from: data size " +
                                std::to_string(data.size()) + " does not match shape " +
                                shape_str(shape));
  return leaf_from(shape, std::move(data));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, double mean) {
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = rng.normal(mean, stddev);
  return leaf_from(shape, std::move(data));
}

const Shape& Tensor::shape() const { return node_->shape; }
size_t Tensor::size() const { return node_->data.size(); }

double Tensor::item() const {
  if (size() != 1)
    throw std::invalid_argument("item(): tensor has size " + std::to_string(size()));
  return node_->data[0];
}

const std::vector<double>& Tensor::data() const { return node_->data; }

std::vector<double>& Tensor::mutable_data() {
  if (!node_->leaf)
    throw std::logic_error("mutable_data(): only leaf tensors may be mutated");
  return node_->data;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!node_->leaf) throw std::logic_error("set_requires_grad: not a leaf");
  node_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return node_->leaf; }

bool Tensor::has_grad() const { return node_ && node_->grad != nullptr; }

Tensor Tensor::grad() const {
  if (!node_->grad) return Tensor::zeros(node_->shape);
  Tensor g;
  g.node_ = node_->grad;
  return g;
}

void Tensor::zero_grad() { node_->grad = nullptr; }

void Tensor::accumulate_grad(const Tensor& g) {
  if (g.shape() != shape()) shape_error("accumulate_grad", shape(), g.shape());
  if (!node_->grad) {
    node_->grad = std::make_shared<TensorNode>();
    node_->grad->shape = shape();
    node_->grad->data.assign(size(), 0.0);
  }
  for (size_t i = 0; i < size(); ++i) node_->grad->data[i] += g.data()[i];
}

Tensor Tensor::detach() const {
  return leaf_from(node_->shape, node_->data);
}

const void* Tensor::node_id() const { return node_.get(); }

// ---------------------------------------------------------------------------
// primitive ops

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, neg(g)}; });
}

Tensor neg(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = -a.data()[i];
  return make_node(a.shape(), std::move(out), {a},
                   [](const Tensor& g) { return std::vector<Tensor>{neg(g)}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_node(a.shape(), std::move(out), {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{mul(g, b), mul(g, a)};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("div", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return make_node(a.shape(), std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tensor ga = div(g, b);
    Tensor gb = neg(div(mul(g, a), mul(b, b)));
    return std::vector<Tensor>{ga, gb};
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
  return make_node(a.shape(), std::move(out), {a},
                   [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  return make_node(a.shape(), std::move(out), {a}, [c](const Tensor& g) {
    return std::vector<Tensor>{mul_scalar(g, c)};
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const size_t r = a.shape()[0], k = a.shape()[1];
  const size_t k2 = b.shape()[0], c = b.shape()[1];
  if (k != k2) shape_error("matmul", a.shape(), b.shape());
  std::vector<double> out(r * c, 0.0);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (size_t i = 0; i < r; ++i) {
    for (size_t t = 0; t < k; ++t) {
      const double av = ad[i * k + t];
      if (av == 0.0) continue;
      const double* brow = bd.data() + t * c;
      double* orow = out.data() + i * c;
      for (size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
    }
  }
  return make_node({r, c}, std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tensor ga = matmul(g, transpose(b));
    Tensor gb = matmul(transpose(a), g);
    return std::vector<Tensor>{ga, gb};
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  return make_node({c, r}, std::move(out), {a}, [](const Tensor& g) {
    return std::vector<Tensor>{transpose(g)};
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return make_node(a.shape(), std::move(out), {a}, [a](const Tensor& g) {
    // Subgradient 0 at exactly 0; the mask is locally constant.
    std::vector<double> mask(a.size());
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = a.data()[i] > 0.0 ? 1.0 : 0.0;
    return std::vector<Tensor>{mul(g, Tensor::from(a.shape(), std::move(mask)))};
  });
}

Tensor exp_(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  return make_node(a.shape(), std::move(out), {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{mul(g, exp_(a))};
  });
}

Tensor log_(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
  return make_node(a.shape(), std::move(out), {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{div(g, a)};
  });
}

Tensor sqrt_(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.data()[i]);
  return make_node(a.shape(), std::move(out), {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{div(mul_scalar(g, 0.5), sqrt_(a))};
  });
}

Tensor sum_all(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_node({1}, {total}, {a}, [shape = a.shape()](const Tensor& g) {
    return std::vector<Tensor>{expand_scalar(g, shape)};
  });
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_over_rows(const Tensor& a) {
  require_rank2("sum_over_rows", a);
  const size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(c, 0.0);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[j] += a.data()[i * c + j];
  return make_node({c}, std::move(out), {a}, [r](const Tensor& g) {
    return std::vector<Tensor>{broadcast_rows(g, r)};
  });
}

Tensor sum_over_cols(const Tensor& a) {
  require_rank2("sum_over_cols", a);
  const size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r, 0.0);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[i] += a.data()[i * c + j];
  return make_node({r}, std::move(out), {a}, [c](const Tensor& g) {
    return std::vector<Tensor>{broadcast_cols(g, c)};
  });
}

Tensor broadcast_rows(const Tensor& v, size_t rows) {
  if (v.rank() != 1)
    throw std::invalid_argument("broadcast_rows: expected rank-1, got " +
                                shape_str(v.shape()));
  const size_t c = v.shape()[0];
  std::vector<double> out(rows * c);
  for (size_t i = 0; i < rows; ++i)
    std::copy(v.data().begin(), v.data().end(), out.begin() + i * c);
  return make_node({rows, c}, std::move(out), {v}, [](const Tensor& g) {
    return std::vector<Tensor>{sum_over_rows(g)};
  });
}

Tensor broadcast_cols(const Tensor& v, size_t cols) {
  if (v.rank() != 1)
    throw std::invalid_argument("broadcast_cols: expected rank-1, got " +
                                shape_str(v.shape()));
  const size_t r = v.shape()[0];
  std::vector<double> out(r * cols);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < cols; ++j) out[i * cols + j] = v.data()[i];
  return make_node({r, cols}, std::move(out), {v}, [](const Tensor& g) {
    return std::vector<Tensor>{sum_over_cols(g)};
  });
}

Tensor expand_scalar(const Tensor& s, const Shape& shape) {
  if (s.size() != 1) throw std::invalid_argument("expand_scalar: source not scalar");
  std::vector<double> out(shape_size(shape), s.data()[0]);
  return make_node(shape, std::move(out), {s}, [](const Tensor& g) {
    return std::vector<Tensor>{sum_all(g)};
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_size(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out = a.data();
  return make_node(shape, std::move(out), {a}, [orig = a.shape()](const Tensor& g) {
    return std::vector<Tensor>{reshape(g, orig)};
  });
}

Tensor gather_rows(const Tensor& m, const std::vector<int>& idx) {
  require_rank2("gather_rows", m);
  const size_t rows = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(idx.size() * c);
  for (size_t i = 0; i < idx.size(); ++i) {
    const int r = idx[i];
    if (r < 0 || static_cast<size_t>(r) >= rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(r) +
                                  " out of range for " + shape_str(m.shape()));
    std::copy(m.data().begin() + r * c, m.data().begin() + (r + 1) * c,
              out.begin() + i * c);
  }
  return make_node({idx.size(), c}, std::move(out), {m}, [idx, rows](const Tensor& g) {
    return std::vector<Tensor>{scatter_rows(g, idx, rows)};
  });
}

Tensor scatter_rows(const Tensor& g, const std::vector<int>& idx, size_t rows) {
  require_rank2("scatter_rows", g);
  if (g.shape()[0] != idx.size())
    throw std::invalid_argument("scatter_rows: row count does not match index count");
  const size_t c = g.shape()[1];
  std::vector<double> out(rows * c, 0.0);
  for (size_t i = 0; i < idx.size(); ++i) {
    const int r = idx[i];
    for (size_t j = 0; j < c; ++j) out[r * c + j] += g.data()[i * c + j];
  }
  return make_node({rows, c}, std::move(out), {g}, [idx](const Tensor& gg) {
    return std::vector<Tensor>{gather_rows(gg, idx)};
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const size_t r = parts[0].shape()[0];
  size_t total = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p);
    if (p.shape()[0] != r) shape_error("concat_cols", parts[0].shape(), p.shape());
    total += p.shape()[1];
  }
  std::vector<double> out(r * total);
  size_t at = 0;
  for (const auto& p : parts) {
    const size_t c = p.shape()[1];
    for (size_t i = 0; i < r; ++i)
      std::copy(p.data().begin() + i * c, p.data().begin() + (i + 1) * c,
                out.begin() + i * total + at);
    at += c;
  }
  std::vector<size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[1]);
  return make_node({r, total}, std::move(out), parts, [widths](const Tensor& g) {
    std::vector<Tensor> grads;
    size_t at = 0;
    for (size_t w : widths) {
      grads.push_back(slice_cols(g, at, at + w));
      at += w;
    }
    return grads;
  });
}

Tensor slice_cols(const Tensor& a, size_t from, size_t to) {
  require_rank2("slice_cols", a);
  const size_t r = a.shape()[0], c = a.shape()[1];
  if (from > to || to > c)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(from) + "," +
                                std::to_string(to) + ") for " + shape_str(a.shape()));
  const size_t w = to - from;
  std::vector<double> out(r * w);
  for (size_t i = 0; i < r; ++i)
    std::copy(a.data().begin() + i * c + from, a.data().begin() + i * c + to,
              out.begin() + i * w);
  return make_node({r, w}, std::move(out), {a}, [from, c](const Tensor& g) {
    return std::vector<Tensor>{embed_cols(g, from, c)};
  });
}

Tensor embed_cols(const Tensor& a, size_t at, size_t total_cols) {
  require_rank2("embed_cols", a);
  const size_t r = a.shape()[0], w = a.shape()[1];
  if (at + w > total_cols)
    throw std::invalid_argument("embed_cols: slice does not fit");
  std::vector<double> out(r * total_cols, 0.0);
  for (size_t i = 0; i < r; ++i)
    std::copy(a.data().begin() + i * w, a.data().begin() + (i + 1) * w,
              out.begin() + i * total_cols + at);
  return make_node({r, total_cols}, std::move(out), {a}, [at, w](const Tensor& g) {
    return std::vector<Tensor>{slice_cols(g, at, at + w)};
  });
}

// ---------------------------------------------------------------------------
// composites

Tensor matvec(const Tensor& m, const Tensor& v) {
  require_rank2("matvec", m);
  if (v.rank() != 1 || v.shape()[0] != m.shape()[1])
    shape_error("matvec", m.shape(), v.shape());
  return reshape(matmul(m, reshape(v, {v.size(), 1})), {m.shape()[0]});
}

namespace {

// Per-row max as a constant: softmax is shift-invariant, so treating the
// max as constant leaves both value and gradient exact.
Tensor rowmax_const(const Tensor& a) {
  const size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> mx(r);
  for (size_t i = 0; i < r; ++i) {
    double m = a.data()[i * c];
    for (size_t j = 1; j < c; ++j) m = std::max(m, a.data()[i * c + j]);
    mx[i] = m;
  }
  return Tensor::from({r}, std::move(mx));
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
  require_rank2("softmax_rows", a);
  const size_t c = a.shape()[1];
  Tensor shifted = sub(a, broadcast_cols(rowmax_const(a), c));
  Tensor e = exp_(shifted);
  Tensor denom = broadcast_cols(sum_over_cols(e), c);
  return div(e, denom);
}

Tensor log_softmax_rows(const Tensor& a) {
  require_rank2("log_softmax_rows", a);
  const size_t c = a.shape()[1];
  Tensor shifted = sub(a, broadcast_cols(rowmax_const(a), c));
  Tensor logsum = log_(sum_over_cols(exp_(shifted)));
  return sub(shifted, broadcast_cols(logsum, c));
}

Tensor layer_norm(const Tensor& h, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2("layer_norm", h);
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const size_t c = h.shape()[1];
  if (gain.rank() != 1 || gain.shape()[0] != c) shape_error("layer_norm", h.shape(), gain.shape());
  if (bias.rank() != 1 || bias.shape()[0] != c) shape_error("layer_norm", h.shape(), bias.shape());
  const double inv_c = 1.0 / static_cast<double>(c);
  Tensor mean = mul_scalar(sum_over_cols(h), inv_c);            // {r}
  Tensor centered = sub(h, broadcast_cols(mean, c));            // (r,c)
  Tensor var = mul_scalar(sum_over_cols(mul(centered, centered)), inv_c);  // {r}
  Tensor inv_std = div(Tensor::ones({h.shape()[0]}), sqrt_(add_scalar(var, eps)));
  Tensor normed = mul(centered, broadcast_cols(inv_std, c));
  return add(mul(normed, broadcast_rows(gain, h.shape()[0])),
             broadcast_rows(bias, h.shape()[0]));
}

Tensor nll_label_smoothed(const Tensor& logits, const std::vector<int>& targets,
                          double smoothing, int pad_id) {
  require_rank2("nll_label_smoothed", logits);
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw std::invalid_argument("nll_label_smoothed: smoothing must be in [0,1)");
  const size_t t_len = logits.shape()[0];
  const size_t v = logits.shape()[1];
  if (targets.size() != t_len)
    throw std::invalid_argument("nll_label_smoothed: targets length " +
                                std::to_string(targets.size()) + " vs logits rows " +
                                std::to_string(t_len));
  std::vector<double> q(t_len * v, 0.0);
  size_t unmasked = 0;
  const double off_mass = v > 1 ? smoothing / static_cast<double>(v - 1) : 0.0;
  for (size_t i = 0; i < t_len; ++i) {
    const int tgt = targets[i];
    if (tgt == pad_id) continue;
    if (tgt < 0 || static_cast<size_t>(tgt) >= v)
      throw std::invalid_argument("nll_label_smoothed: target " + std::to_string(tgt) +
                                  " out of vocab range " + std::to_string(v));
    ++unmasked;
    for (size_t j = 0; j < v; ++j) q[i * v + j] = off_mass;
    q[i * v + static_cast<size_t>(tgt)] = 1.0 - smoothing;
  }
  if (unmasked == 0)
    throw std::invalid_argument("nll_label_smoothed: all positions masked");
  Tensor logp = log_softmax_rows(logits);
  Tensor weighted = mul(logp, Tensor::from({t_len, v}, std::move(q)));
  return mul_scalar(sum_all(weighted), -1.0 / static_cast<double>(unmasked));
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  std::vector<double> mask(a.size());
  for (auto& m : mask) m = rng.uniform01() < keep ? 1.0 / keep : 0.0;
  return mul(a, Tensor::from(a.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// autodiff sweep

namespace {

std::vector<TensorNode*> topo_order(TensorNode* root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  // Iterative post-order DFS; parents end up before their consumers.
  std::vector<std::pair<TensorNode*, size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next].node();
      ++next;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

Tensor wrap(TensorNode* node, const std::unordered_map<TensorNode*, Tensor>& grads) {
  const auto it = grads.find(node);
  return it == grads.end() ? Tensor() : it->second;
}

// Runs the reverse sweep from `loss`, returning the gradient map. When
// `needed` is non-null, nodes outside it are skipped (their gradients are
// not required for any requested leaf).
std::unordered_map<TensorNode*, Tensor> sweep(
    const Tensor& loss, bool create_graph,
    const std::unordered_set<TensorNode*>* needed) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  std::unordered_map<TensorNode*, Tensor> grads;
  if (!loss.requires_grad()) return grads;

  auto order = topo_order(loss.node());
  grads[loss.node()] = Tensor::ones({1});

  std::unique_ptr<NoGradGuard> guard;
  if (!create_graph) guard = std::make_unique<NoGradGuard>();

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (!node->backward_fn) continue;
    if (needed && !needed->count(node)) continue;
    Tensor gout = wrap(node, grads);
    if (!gout.defined()) continue;
    auto parent_grads = node->backward_fn(gout);
    if (parent_grads.size() != node->parents.size())
      throw std::logic_error("backward_fn returned wrong gradient count");
    for (size_t p = 0; p < node->parents.size(); ++p) {
      TensorNode* parent = node->parents[p].node();
      if (!parent->requires_grad) continue;
      if (needed && !needed->count(parent)) continue;
      auto found = grads.find(parent);
      if (found == grads.end()) {
        grads[parent] = parent_grads[p];
      } else {
        found->second = add(found->second, parent_grads[p]);
      }
    }
  }
  return grads;
}

}  // namespace

void backward(const Tensor& loss, bool create_graph) {
  auto grads = sweep(loss, create_graph, nullptr);
  for (auto& [node, g] : grads) {
    if (!node->leaf || !node->requires_grad) continue;
    // Leaf .grad always stores detached data; graph-linked gradients are the
    // domain of grad().
    if (!node->grad) {
      node->grad = std::make_shared<TensorNode>();
      node->grad->shape = node->shape;
      node->grad->data.assign(node->data.size(), 0.0);
    }
    for (size_t i = 0; i < node->data.size(); ++i) node->grad->data[i] += g.data()[i];
  }
}

std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& wrt,
                         bool create_graph) {
  for (const auto& w : wrt) {
    if (!w.requires_grad())
      throw std::invalid_argument("grad: a requested tensor does not require grad");
  }
  std::unordered_map<TensorNode*, Tensor> grads;
  if (loss.requires_grad()) {
    // Restrict the sweep to nodes that can reach a requested tensor.
    auto order = topo_order(loss.node());
    std::unordered_set<TensorNode*> wanted;
    for (const auto& w : wrt) wanted.insert(w.node());
    std::unordered_set<TensorNode*> needed;
    for (TensorNode* node : order) {  // parents precede consumers
      bool n = wanted.count(node) > 0;
      if (!n) {
        for (const auto& p : node->parents) {
          if (needed.count(p.node())) {
            n = true;
            break;
          }
        }
      }
      if (n) needed.insert(node);
    }
    grads = sweep(loss, create_graph, &needed);
  }
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    Tensor g = wrap(w.node(), grads);
    out.push_back(g.defined() ? g : Tensor::zeros(w.shape()));
  }
  return out;
}

}  // namespace prefsum
