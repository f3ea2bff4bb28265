#include "prefsum/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace prefsum {

std::string group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kTheta: return "theta";
    case ParamGroup::kPhiSelf: return "phi_self";
    case ParamGroup::kPhiMeta: return "phi_meta";
  }
  return "theta";
}

ParamGroup group_from_name(const std::string& name) {
  if (name == "theta") return ParamGroup::kTheta;
  if (name == "phi_self") return ParamGroup::kPhiSelf;
  if (name == "phi_meta") return ParamGroup::kPhiMeta;
  throw DataError("unknown parameter group '" + name + "'");
}

Tensor& ParamStore::add(const std::string& name, ParamGroup group, Tensor tensor) {
  if (entries_.count(name))
    throw std::logic_error("ParamStore: duplicate parameter '" + name + "'");
  tensor.set_requires_grad(true);
  auto [it, ok] = entries_.emplace(name, Entry{std::move(tensor), group});
  order_.push_back(name);
  return it->second.tensor;
}

bool ParamStore::contains(const std::string& name) const {
  return entries_.count(name) > 0;
}

Tensor& ParamStore::at(const std::string& name) {
  const auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::logic_error("ParamStore: unknown parameter '" + name + "'");
  return it->second.tensor;
}

const Tensor& ParamStore::at(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::logic_error("ParamStore: unknown parameter '" + name + "'");
  return it->second.tensor;
}

ParamGroup ParamStore::group_of(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::logic_error("ParamStore: unknown parameter '" + name + "'");
  return it->second.group;
}

std::vector<std::string> ParamStore::names_in_group(ParamGroup g) const {
  std::vector<std::string> out;
  for (const auto& name : order_)
    if (entries_.at(name).group == g) out.push_back(name);
  return out;
}

std::vector<Tensor> ParamStore::tensors_in_group(ParamGroup g) const {
  std::vector<Tensor> out;
  for (const auto& name : order_)
    if (entries_.at(name).group == g) out.push_back(entries_.at(name).tensor);
  return out;
}

void ParamStore::zero_grad_all() {
  for (const auto& name : order_) entries_.at(name).tensor.zero_grad();
}

uint64_t ParamStore::fingerprint(ParamGroup g) const {
  return fingerprint(names_in_group(g));
}

uint64_t ParamStore::fingerprint(const std::vector<std::string>& names) const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& name : names) {
    const auto& data = at(name).data();
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(data.data(), data.size() * sizeof(double), h);
  }
  return h;
}

// ---------------------------------------------------------------------------

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double lr)
    : params_(std::move(params)), lr_(lr) {}

void SgdOptimizer::step(double lr_scale) {
  for (auto& p : params_) {
    if (!p.has_grad()) throw std::logic_error("SgdOptimizer: missing grads");
    const auto& g = p.grad().data();
    auto& w = p.mutable_data();
    const double lr = lr_ * lr_scale;
    for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].size(), 0.0);
    v_[i].assign(params_[i].size(), 0.0);
  }
}

void AdamOptimizer::step(double lr_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double lr = lr_ * lr_scale;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) throw std::logic_error("AdamOptimizer: missing grads");
    const auto& g = p.grad().data();
    auto& w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::map<std::string, std::vector<double>> AdamOptimizer::state(
    const std::vector<std::string>& names) const {
  if (names.size() != params_.size())
    throw std::logic_error("AdamOptimizer::state: name count mismatch");
  std::map<std::string, std::vector<double>> out;
  for (size_t i = 0; i < names.size(); ++i) {
    out["adam.m." + names[i]] = m_[i];
    out["adam.v." + names[i]] = v_[i];
  }
  out["adam.t"] = {static_cast<double>(t_)};
  return out;
}

double finite_diff_check(const std::function<Tensor()>& loss_fn,
                         const std::vector<Tensor>& params, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be positive");
  for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
  Tensor loss = loss_fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad().data());

  double worst = 0.0;
  NoGradGuard no_grad;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto p = params[pi];
    auto& w = p.mutable_data();
    for (size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double f_plus = loss_fn().item();
      w[i] = saved - eps;
      const double f_minus = loss_fn().item();
      w[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

void write_doubles_le(std::ofstream& out, const std::vector<double>& data) {
  for (double d : data) {
    const auto bits = std::bit_cast<uint64_t>(d);
    char bytes[8];
    for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((bits >> (8 * k)) & 0xFF);
    out.write(bytes, 8);
  }
}

std::vector<double> read_doubles_le(std::ifstream& in, size_t count,
                                    const std::string& path) {
  std::vector<double> data(count);
  std::vector<char> raw(count * 8);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw DataError(path + ": truncated checkpoint payload");
  for (size_t i = 0; i < count; ++i) {
    uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<uint64_t>(static_cast<unsigned char>(raw[i * 8 + k])) << (8 * k);
    data[i] = std::bit_cast<double>(bits);
  }
  return data;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const Json& config,
                     const std::map<std::string, std::vector<double>>& opt_state) {
  Json header;
  header["format_version"] = kFormatVersion;
  header["config"] = config;
  Json tensors = Json::array();
  for (const auto& name : store.names()) {
    const Tensor& t = store.at(name);
    Json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["group"] = group_name(store.group_of(name));
    tensors.push_back(std::move(entry));
  }
  for (const auto& [key, data] : opt_state) {
    Json entry;
    entry["name"] = key;
    entry["shape"] = Shape{data.size()};
    entry["group"] = "opt";
    tensors.push_back(std::move(entry));
  }
  header["tensors"] = std::move(tensors);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open file for writing");
  out << header.dump() << '\n';
  for (const auto& name : store.names()) write_doubles_le(out, store.at(name).data());
  for (const auto& [key, data] : opt_state) write_doubles_le(out, data);
  if (!out) throw DataError(path + ": write failed");
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open file");
  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError(path + ": missing header");
  Json header = Json::parse(header_line, nullptr, false);
  if (header.is_discarded()) throw DataError(path + ": malformed header JSON");

  CheckpointData ckpt;
  ckpt.config = header.value("config", Json::object());
  for (const auto& entry : header.at("tensors")) {
    CheckpointData::Entry e;
    e.name = entry.at("name").get<std::string>();
    e.shape = entry.at("shape").get<Shape>();
    e.group = entry.at("group").get<std::string>();
    e.data = read_doubles_le(in, shape_size(e.shape), path);
    ckpt.tensors.push_back(std::move(e));
  }
  return ckpt;
}

const CheckpointData::Entry* CheckpointData::find(const std::string& name) const {
  for (const auto& e : tensors)
    if (e.name == name) return &e;
  return nullptr;
}

void restore_params(ParamStore& store, const CheckpointData& ckpt) {
  for (const auto& e : ckpt.tensors) {
    if (e.group == "opt") continue;
    if (!store.contains(e.name))
      throw DataError("checkpoint parameter '" + e.name + "' not present in model");
    Tensor& t = store.at(e.name);
    if (t.shape() != e.shape)
      throw DataError("checkpoint parameter '" + e.name + "' has shape " +
                      shape_str(e.shape) + ", model expects " + shape_str(t.shape()));
    t.mutable_data() = e.data;
  }
}

}  // namespace prefsum
