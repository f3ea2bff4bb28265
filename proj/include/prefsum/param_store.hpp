#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "prefsum/jsonl.hpp"
#include "prefsum/tensor.hpp"

namespace prefsum {

// Parameter partition: base model / self-supervised adapters / meta adapters.
enum class ParamGroup { kTheta, kPhiSelf, kPhiMeta };

std::string group_name(ParamGroup g);
ParamGroup group_from_name(const std::string& name);

// Named parameter collection with deterministic (insertion) ordering.
class ParamStore {
 public:
  Tensor& add(const std::string& name, ParamGroup group, Tensor tensor);
  bool contains(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  ParamGroup group_of(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  std::vector<std::string> names_in_group(ParamGroup g) const;
  std::vector<Tensor> tensors_in_group(ParamGroup g) const;

  void zero_grad_all();

  // FNV-1a over the raw little-endian bytes of every tensor in the group,
  // in insertion order. Used by freeze-contract tests.
  uint64_t fingerprint(ParamGroup g) const;
  uint64_t fingerprint(const std::vector<std::string>& names) const;

 private:
  struct Entry {
    Tensor tensor;
    ParamGroup group;
  };
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

// Parameter overlay: a model forward pass resolves names through the overlay
// first, falling back to the store. Adapted task parameters are supplied
// this way without mutating the store.
class ParamOverlay {
 public:
  ParamOverlay() = default;
  explicit ParamOverlay(std::map<std::string, Tensor> values)
      : values_(std::move(values)) {}

  void set(const std::string& name, Tensor t) { values_[name] = std::move(t); }
  const Tensor* find(const std::string& name) const {
    const auto it = values_.find(name);
    return it == values_.end() ? nullptr : &it->second;
  }
  const std::map<std::string, Tensor>& values() const { return values_; }

 private:
  std::map<std::string, Tensor> values_;
};

// ---- optimizers -----------------------------------------------------------

// Plain SGD over an explicit parameter list.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, double lr);
  void step(double lr_scale = 1.0);
  void zero_grad();
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  double lr_;
};

// Adam with bias correction; moment state lives in the optimizer keyed by
// parameter position.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step(double lr_scale = 1.0);
  void zero_grad();
  double lr() const { return lr_; }
  int64_t step_count() const { return t_; }

  // Moment buffers keyed by the caller's parameter names (for checkpoints).
  std::map<std::string, std::vector<double>> state(const std::vector<std::string>& names) const;

 private:
  std::vector<Tensor> params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Central-difference gradient check: returns the max over all coordinates of
// |analytic - numeric| / max(1, |analytic|). loss_fn must evaluate the loss
// from the parameters' current data.
double finite_diff_check(const std::function<Tensor()>& loss_fn,
                         const std::vector<Tensor>& params, double eps = 1e-5);

// ---- checkpoints ----------------------------------------------------------
// Single file: one-line JSON header (names, shapes, groups, optimizer-state
// keys, embedded config), then little-endian float64 payloads in header order.

struct CheckpointData {
  Json config;
  struct Entry {
    std::string name;
    Shape shape;
    std::string group;  // param group, or "opt" for optimizer state
    std::vector<double> data;
  };
  std::vector<Entry> tensors;

  const Entry* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const Json& config,
                     const std::map<std::string, std::vector<double>>& opt_state = {});

CheckpointData load_checkpoint(const std::string& path);

// Restores parameter data (shapes and groups must match the store).
void restore_params(ParamStore& store, const CheckpointData& ckpt);

}  // namespace prefsum
