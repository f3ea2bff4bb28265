#include "prefsum/model.hpp"

#include <cmath>
#include <stdexcept>

namespace prefsum {

std::string adapter_kind_name(AdapterKind k) {
  switch (k) {
    case AdapterKind::kNone: return "none";
    case AdapterKind::kPlain: return "plain";
    case AdapterKind::kPref: return "pref";
  }
  return "none";
}

AdapterKind adapter_kind_from_name(const std::string& name) {
  if (name == "none") return AdapterKind::kNone;
  if (name == "plain") return AdapterKind::kPlain;
  if (name == "pref") return AdapterKind::kPref;
  throw DataError("unknown adapter kind '" + name + "'");
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw DataError("model config: d_model must be a positive multiple of n_heads");
  if (vocab_size < 5) throw DataError("model config: vocab_size too small");
  if (max_seq_len == 0) throw DataError("model config: max_seq_len must be positive");
  if (preference_dim != PreferenceVector::kDim)
    throw DataError("model config: preference_dim must be 7");
  if (adapter_kind != AdapterKind::kNone) {
    if (adapter_hidden == 0 || adapter_hidden >= d_model)
      throw DataError("model config: adapter_hidden must be in (0, d_model)");
    if (!adapter_set_self && !adapter_set_meta)
      throw DataError("model config: adapters enabled but no adapter set active");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw DataError("model config: dropout_rate must be in [0, 1)");
}

Json ModelConfig::to_json() const {
  Json j;
  j["vocab_size"] = vocab_size;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["n_enc_layers"] = n_enc_layers;
  j["n_dec_layers"] = n_dec_layers;
  j["ffn_dim"] = ffn_dim;
  j["adapter_hidden"] = adapter_hidden;
  j["preference_dim"] = preference_dim;
  j["max_seq_len"] = max_seq_len;
  j["dropout_rate"] = dropout_rate;
  j["tie_embeddings"] = tie_embeddings;
  j["adapter_kind"] = adapter_kind_name(adapter_kind);
  j["adapter_set_self"] = adapter_set_self;
  j["adapter_set_meta"] = adapter_set_meta;
  j["use_pln"] = use_pln;
  j["pln_relu"] = pln_relu;
  j["init_std"] = init_std;
  j["adapter_init_std"] = adapter_init_std;
  j["ln_eps"] = ln_eps;
  j["attn_scale"] = attn_scale;
  return j;
}

ModelConfig ModelConfig::from_json(const Json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_enc_layers = j.value("n_enc_layers", c.n_enc_layers);
  c.n_dec_layers = j.value("n_dec_layers", c.n_dec_layers);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.adapter_hidden = j.value("adapter_hidden", c.adapter_hidden);
  c.preference_dim = j.value("preference_dim", c.preference_dim);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
  c.adapter_kind = adapter_kind_from_name(j.value("adapter_kind", std::string("none")));
  c.adapter_set_self = j.value("adapter_set_self", c.adapter_set_self);
  c.adapter_set_meta = j.value("adapter_set_meta", c.adapter_set_meta);
  c.use_pln = j.value("use_pln", c.use_pln);
  c.pln_relu = j.value("pln_relu", c.pln_relu);
  c.init_std = j.value("init_std", c.init_std);
  c.adapter_init_std = j.value("adapter_init_std", c.adapter_init_std);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  c.attn_scale = j.value("attn_scale", c.attn_scale);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// building blocks

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                            const AttentionParams& params, size_t n_heads,
                            double scale, bool causal, std::vector<Tensor>* attn_out) {
  const size_t d = params.wq.shape()[1];
  if (n_heads == 0 || d % n_heads != 0)
    throw std::invalid_argument("multi_head_attention: bad head count");
  const size_t dh = d / n_heads;
  if (scale <= 0.0) scale = std::sqrt(static_cast<double>(dh));

  const size_t tq = q_in.shape()[0];
  const size_t tk = kv_in.shape()[0];
  Tensor q = add(matmul(q_in, params.wq), broadcast_rows(params.bq, tq));
  Tensor kx = add(matmul(kv_in, params.wk), broadcast_rows(params.bk, tk));
  Tensor vx = add(matmul(kv_in, params.wv), broadcast_rows(params.bv, tk));

  Tensor mask;
  if (causal) {
    std::vector<double> m(tq * tk, 0.0);
    for (size_t i = 0; i < tq; ++i)
      for (size_t j = i + 1; j < tk; ++j) m[i * tk + j] = -1e9;
    mask = Tensor::from({tq, tk}, std::move(m));
  }

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(n_heads);
  for (size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(kx, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(vx, h * dh, (h + 1) * dh);
    Tensor logits = mul_scalar(matmul(qh, transpose(kh)), 1.0 / scale);
    if (mask.defined()) logits = add(logits, mask);
    Tensor probs = softmax_rows(logits);
    if (attn_out) attn_out->push_back(probs);
    head_outputs.push_back(matmul(probs, vh));
  }
  Tensor concat = concat_cols(head_outputs);
  return add(matmul(concat, params.wo), broadcast_rows(params.bo, tq));
}

Tensor adapter_forward(const Tensor& h, const Tensor& wd, const Tensor& wu) {
  Tensor bottleneck = relu(matmul(h, transpose(wd)));
  return add(matmul(bottleneck, transpose(wu)), h);
}

ModulatedWeights modulate_params(const Tensor& wd, const Tensor& wu, const Tensor& wgd,
                                 const Tensor& wbd, const Tensor& wgu, const Tensor& wbu,
                                 const Tensor& p) {
  if (p.rank() != 1 || p.shape()[0] != wgd.shape()[1])
    throw std::invalid_argument("modulate_params: preference has shape " +
                                shape_str(p.shape()) + ", expected {" +
                                std::to_string(wgd.shape()[1]) + "}");
  const size_t m = wd.shape()[1];
  const size_t n = wu.shape()[1];
  Tensor gamma_d = matvec(wgd, p);  // {n}
  Tensor beta_d = matvec(wbd, p);   // {n}
  Tensor gamma_u = matvec(wgu, p);  // {m}
  Tensor beta_u = matvec(wbu, p);   // {m}
  ModulatedWeights out;
  out.wd = add(mul(wd, broadcast_cols(gamma_d, m)), broadcast_cols(beta_d, m));
  out.wu = add(mul(wu, broadcast_cols(gamma_u, n)), broadcast_cols(beta_u, n));
  return out;
}

Tensor p_adapter_forward(const Tensor& h, const Tensor& wd, const Tensor& wu,
                         const Tensor& wgd, const Tensor& wbd, const Tensor& wgu,
                         const Tensor& wbu, const Tensor& p) {
  const ModulatedWeights w = modulate_params(wd, wu, wgd, wbd, wgu, wbu, p);
  Tensor bottleneck = relu(matmul(h, transpose(w.wd)));
  return add(matmul(bottleneck, transpose(w.wu)), h);
}

Tensor p_layer_norm(const Tensor& h, const Tensor& g, const Tensor& b, const Tensor& wg,
                    const Tensor& wb, double eps, bool relu_activation) {
  Tensor out = layer_norm(h, mul(wg, g), mul(wb, b), eps);
  return relu_activation ? relu(out) : out;
}

// ---------------------------------------------------------------------------
// model

Seq2SeqModel::Seq2SeqModel(ModelConfig config, uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  build_params(seed);
}

namespace {

const std::vector<std::string>& enc_sites() {
  static const std::vector<std::string> kSites = {"sa", "out"};
  return kSites;
}

const std::vector<std::string>& dec_sites() {
  static const std::vector<std::string> kSites = {"sa", "ca", "out"};
  return kSites;
}

}  // namespace

void Seq2SeqModel::build_params(uint64_t seed) {
  const size_t d = config_.d_model;
  const size_t v = config_.vocab_size;
  const size_t f = config_.ffn_dim;
  const size_t n = config_.adapter_hidden;
  const size_t k = config_.preference_dim;

  auto randn = [&](const std::string& name, const Shape& shape, double stddev) {
    Rng rng(derive_seed(seed, name));
    return params_.add(name, ParamGroup::kTheta, Tensor::randn(shape, rng, stddev));
  };
  auto zeros = [&](const std::string& name, const Shape& shape) {
    return params_.add(name, ParamGroup::kTheta, Tensor::zeros(shape));
  };
  auto add_group = [&](const std::string& name, ParamGroup group, Tensor t) {
    params_.add(name, group, std::move(t));
  };

  randn("embed.tok", {v, d}, config_.init_std);
  randn("embed.pos", {config_.max_seq_len, d}, config_.init_std);
  if (!config_.tie_embeddings) randn("out_proj", {d, v}, config_.init_std);

  auto build_attention = [&](const std::string& prefix) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) randn(prefix + "." + w, {d, d}, config_.init_std);
    for (const char* b : {"bq", "bk", "bv", "bo"}) zeros(prefix + "." + b, {d});
  };
  auto build_ffn = [&](const std::string& prefix) {
    randn(prefix + ".w1", {d, f}, config_.init_std);
    zeros(prefix + ".b1", {f});
    randn(prefix + ".w2", {f, d}, config_.init_std);
    zeros(prefix + ".b2", {d});
  };
  auto build_ln = [&](const std::string& prefix) {
    params_.add(prefix + ".g", ParamGroup::kTheta, Tensor::ones({d}));
    params_.add(prefix + ".b", ParamGroup::kTheta, Tensor::zeros({d}));
  };
  auto build_adapter_set = [&](const std::string& site, const std::string& set,
                               ParamGroup group) {
    const std::string base = site + ".ada." + set;
    auto ada_randn = [&](const std::string& suffix, const Shape& shape) {
      Rng rng(derive_seed(seed, base + "." + suffix));
      add_group(base + "." + suffix, group,
                Tensor::randn(shape, rng, config_.adapter_init_std));
    };
    ada_randn("wd", {n, d});
    ada_randn("wu", {d, n});
    if (config_.adapter_kind == AdapterKind::kPref) {
      ada_randn("wgd", {n, k});
      ada_randn("wbd", {n, k});
      ada_randn("wgu", {d, k});
      ada_randn("wbu", {d, k});
      if (config_.use_pln) {
        const std::string pln = site + ".pln." + set;
        add_group(pln + ".g", group, Tensor::ones({d}));
        add_group(pln + ".b", group, Tensor::zeros({d}));
        add_group(pln + ".wg", group, Tensor::ones({d}));
        add_group(pln + ".wb", group, Tensor::ones({d}));
      }
    }
  };
  auto build_adapters_at = [&](const std::string& site) {
    if (config_.adapter_kind == AdapterKind::kNone) return;
    // phi_self precedes phi_meta at every insertion point.
    if (config_.adapter_set_self) build_adapter_set(site, "self", ParamGroup::kPhiSelf);
    if (config_.adapter_set_meta) build_adapter_set(site, "meta", ParamGroup::kPhiMeta);
  };

  for (size_t i = 0; i < config_.n_enc_layers; ++i) {
    const std::string layer = "enc." + std::to_string(i);
    build_attention(layer + ".sa");
    build_ffn(layer + ".sa_ff");
    build_ln(layer + ".sa_ln");
    build_ffn(layer + ".ff");
    build_ln(layer + ".ln");
    if (config_.adapter_kind == AdapterKind::kPlain)
      for (const auto& site : enc_sites()) build_adapters_at(layer + "." + site);
  }
  for (size_t i = 0; i < config_.n_dec_layers; ++i) {
    const std::string layer = "dec." + std::to_string(i);
    build_attention(layer + ".sa");
    build_ffn(layer + ".sa_ff");
    build_ln(layer + ".sa_ln");
    build_attention(layer + ".ca");
    build_ffn(layer + ".ca_ff");
    build_ln(layer + ".ca_ln");
    build_ffn(layer + ".ff");
    build_ln(layer + ".ln");
    if (config_.adapter_kind != AdapterKind::kNone)
      for (const auto& site : dec_sites()) build_adapters_at(layer + "." + site);
  }
}

const Tensor& Seq2SeqModel::P(const std::string& name, const Ctx& ctx) const {
  if (ctx.overlay) {
    if (const Tensor* t = ctx.overlay->find(name)) return *t;
  }
  return params_.at(name);
}

Tensor Seq2SeqModel::maybe_dropout(const Tensor& h, const Ctx& ctx) const {
  if (config_.dropout_rate <= 0.0 || ctx.dropout_rng == nullptr) return h;
  return dropout(h, config_.dropout_rate, *ctx.dropout_rng);
}

Tensor Seq2SeqModel::embed(const std::vector<int>& ids, const Ctx& ctx) const {
  if (ids.empty()) throw std::invalid_argument("embed: empty id sequence");
  if (ids.size() > config_.max_seq_len)
    throw std::invalid_argument("embed: sequence length " + std::to_string(ids.size()) +
                                " exceeds max_seq_len " +
                                std::to_string(config_.max_seq_len));
  std::vector<int> positions(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
  return add(gather_rows(P("embed.tok", ctx), ids),
             gather_rows(P("embed.pos", ctx), positions));
}

Tensor Seq2SeqModel::mha(const Tensor& q_in, const Tensor& kv_in,
                         const std::string& prefix, bool causal, const Ctx& ctx) const {
  AttentionParams p{P(prefix + ".wq", ctx), P(prefix + ".bq", ctx),
                    P(prefix + ".wk", ctx), P(prefix + ".bk", ctx),
                    P(prefix + ".wv", ctx), P(prefix + ".bv", ctx),
                    P(prefix + ".wo", ctx), P(prefix + ".bo", ctx)};
  return multi_head_attention(q_in, kv_in, p, config_.n_heads, config_.attn_scale,
                              causal);
}

Tensor Seq2SeqModel::ffn(const Tensor& h, const std::string& prefix, const Ctx& ctx) const {
  const size_t rows = h.shape()[0];
  Tensor inner = relu(add(matmul(h, P(prefix + ".w1", ctx)),
                          broadcast_rows(P(prefix + ".b1", ctx), rows)));
  return add(matmul(inner, P(prefix + ".w2", ctx)),
             broadcast_rows(P(prefix + ".b2", ctx), rows));
}

Tensor Seq2SeqModel::apply_adapters(const Tensor& h, const std::string& site,
                                    const Tensor* pref, const Ctx& ctx) const {
  if (config_.adapter_kind == AdapterKind::kNone) return h;
  if (config_.adapter_kind == AdapterKind::kPref && site.rfind("dec.", 0) != 0) return h;

  Tensor out = h;
  for (const char* set : {"self", "meta"}) {
    const bool active = std::string(set) == "self" ? config_.adapter_set_self
                                                   : config_.adapter_set_meta;
    if (!active) continue;
    const std::string base = site + ".ada." + set;
    if (config_.adapter_kind == AdapterKind::kPlain) {
      out = adapter_forward(out, P(base + ".wd", ctx), P(base + ".wu", ctx));
      continue;
    }
    if (pref == nullptr) throw std::invalid_argument("preference required");
    out = p_adapter_forward(out, P(base + ".wd", ctx), P(base + ".wu", ctx),
                            P(base + ".wgd", ctx), P(base + ".wbd", ctx),
                            P(base + ".wgu", ctx), P(base + ".wbu", ctx), *pref);
    if (config_.use_pln) {
      const std::string pln = site + ".pln." + set;
      out = p_layer_norm(out, P(pln + ".g", ctx), P(pln + ".b", ctx),
                         P(pln + ".wg", ctx), P(pln + ".wb", ctx), config_.ln_eps,
                         config_.pln_relu);
    }
  }
  return out;
}

Tensor Seq2SeqModel::ln(const Tensor& h, const std::string& prefix, const Ctx& ctx) const {
  return layer_norm(h, P(prefix + ".g", ctx), P(prefix + ".b", ctx), config_.ln_eps);
}

Tensor Seq2SeqModel::sa_block(const Tensor& h, const std::string& layer, bool causal,
                              const Tensor* pref, const Ctx& ctx) const {
  Tensor a = maybe_dropout(mha(h, h, layer + ".sa", causal, ctx), ctx);
  Tensor f = maybe_dropout(ffn(a, layer + ".sa_ff", ctx), ctx);
  f = apply_adapters(f, layer + ".sa", pref, ctx);
  return ln(add(f, h), layer + ".sa_ln", ctx);
}

Tensor Seq2SeqModel::ca_block(const Tensor& h, const Tensor& h_enc,
                              const std::string& layer, const Tensor* pref,
                              const Ctx& ctx) const {
  Tensor a = maybe_dropout(mha(h, h_enc, layer + ".ca", false, ctx), ctx);
  Tensor f = maybe_dropout(ffn(a, layer + ".ca_ff", ctx), ctx);
  f = apply_adapters(f, layer + ".ca", pref, ctx);
  return ln(add(f, h), layer + ".ca_ln", ctx);
}

Tensor Seq2SeqModel::encode(const std::vector<int>& src_ids, const ParamOverlay* overlay,
                            Rng* dropout_rng) const {
  const Ctx ctx{overlay, dropout_rng};
  Tensor h = embed(src_ids, ctx);
  for (size_t i = 0; i < config_.n_enc_layers; ++i) {
    const std::string layer = "enc." + std::to_string(i);
    Tensor s = sa_block(h, layer, /*causal=*/false, nullptr, ctx);
    Tensor f = maybe_dropout(ffn(s, layer + ".ff", ctx), ctx);
    f = apply_adapters(f, layer + ".out", nullptr, ctx);
    h = ln(add(f, s), layer + ".ln", ctx);
  }
  return h;
}

Tensor Seq2SeqModel::run_decoder(const Tensor& h_enc,
                                 const std::vector<int>& dec_input_ids,
                                 const Tensor* preference, const Ctx& ctx) const {
  if (config_.pref_adapters_active() && preference == nullptr)
    throw std::invalid_argument("preference required");
  if (preference && (preference->rank() != 1 ||
                     preference->shape()[0] != config_.preference_dim))
    throw std::invalid_argument("preference must have shape {" +
                                std::to_string(config_.preference_dim) + "}");

  Tensor h = embed(dec_input_ids, ctx);
  for (size_t i = 0; i < config_.n_dec_layers; ++i) {
    const std::string layer = "dec." + std::to_string(i);
    Tensor s = sa_block(h, layer, /*causal=*/true, preference, ctx);
    Tensor c = ca_block(s, h_enc, layer, preference, ctx);
    Tensor f = maybe_dropout(ffn(c, layer + ".ff", ctx), ctx);
    f = apply_adapters(f, layer + ".out", preference, ctx);
    h = ln(add(f, c), layer + ".ln", ctx);
  }
  if (config_.tie_embeddings) return matmul(h, transpose(P("embed.tok", ctx)));
  return matmul(h, P("out_proj", ctx));
}

Tensor Seq2SeqModel::forward(const std::vector<int>& src_ids,
                             const std::vector<int>& dec_input_ids,
                             const Tensor* preference, const ParamOverlay* overlay,
                             Rng* dropout_rng) const {
  const Ctx ctx{overlay, dropout_rng};
  Tensor h_enc = encode(src_ids, overlay, dropout_rng);
  return run_decoder(h_enc, dec_input_ids, preference, ctx);
}

Tensor Seq2SeqModel::decode_logits(const Tensor& h_enc,
                                   const std::vector<int>& dec_input_ids,
                                   const Tensor* preference, const ParamOverlay* overlay,
                                   Rng* dropout_rng) const {
  const Ctx ctx{overlay, dropout_rng};
  return run_decoder(h_enc, dec_input_ids, preference, ctx);
}

const void* Seq2SeqModel::output_projection_id() const {
  return config_.tie_embeddings ? params_.at("embed.tok").node_id()
                                : params_.at("out_proj").node_id();
}

Tensor Seq2SeqModel::preference_tensor(const PreferenceVector& p) {
  return Tensor::from({PreferenceVector::kDim}, p.as_vector());
}

}  // namespace prefsum
